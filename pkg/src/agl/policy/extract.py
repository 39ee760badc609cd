"""Extension point for turning policy prose into structured policies.

No extractor ships with the package; policies are authored in the policy
language. An implementation might draft candidates with a language model
for a human to review before upload.
"""
from __future__ import annotations

from typing import Protocol, Sequence, runtime_checkable

from .model import Policy


@runtime_checkable
class PolicyExtractor(Protocol):
    def extract(self, prose: str, *, owner_role: str, owner_id: str) -> Sequence[Policy]:
        """Return draft policies whose ``source_text`` is the sentence they came from."""
        ...
