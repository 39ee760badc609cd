"""Vote aggregation under hierarchical, weighted and consensus protocols.

Everything here is a pure function of votes, protocol and precedence: policy
contents never reach this module. Arithmetic is exact (``Fraction``) so ties
are decided on exact values and results are reproducible bit for bit.
"""
from __future__ import annotations

import enum
import functools
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime
from fractions import Fraction
from typing import Any, Iterable, Mapping, Sequence

from .canonical import canonical_json
from .policy import DEFAULT_CATEGORY_ORDER, DEFAULT_ROLE_ORDER, Category, Precedence, PrecedenceCycle
from .policy.repository import check_acyclic
from .stakeholder import Decision, Vote

log = logging.getLogger(__name__)

VALUE = {Decision.APPROVE: 1, Decision.CONDITIONAL: 0, Decision.REJECT: -1}
RISK_WEIGHT = {Decision.APPROVE: Fraction(0), Decision.CONDITIONAL: Fraction(1, 2), Decision.REJECT: Fraction(1)}


class NegotiationError(ValueError):
    pass


class EmptyCycle(NegotiationError):
    pass


class MixedCycleIds(NegotiationError):
    pass


class IncomparableRoles(NegotiationError):
    pass


class MissingWeight(NegotiationError):
    def __init__(self, role: str):
        super().__init__(f"no weight configured for role {role!r}")
        self.role = role


# --- precedence ------------------------------------------------------------------


class _Order:
    """Strict partial order built from explicit pairs plus compatible defaults."""

    def __init__(self, pairs: Iterable[tuple[str, str]], default: Sequence[str]):
        pairs = list(pairs)
        check_acyclic(pairs)
        self.nodes: set[str] = set(default)
        below: dict[str, set[str]] = {}

        def add(hi: str, lo: str) -> None:
            self.nodes.update((hi, lo))
            below.setdefault(hi, set()).add(lo)

        for hi, lo in pairs:
            add(hi, lo)
        self.below = self._closure(below)
        # Defaults fill in only where they do not contradict explicit pairs.
        for i, hi in enumerate(default):
            for lo in default[i + 1 :]:
                if hi not in self.below.get(lo, ()) and lo not in self.below.get(hi, ()):
                    add(hi, lo)
                    self.below = self._closure(below)
        for n in self.nodes:
            self.below.setdefault(n, set())
        self.level = self._levels()

    def _closure(self, below: dict[str, set[str]]) -> dict[str, set[str]]:
        out = {}
        for start in below:
            seen: set[str] = set()
            stack = list(below[start])
            while stack:
                n = stack.pop()
                if n not in seen:
                    seen.add(n)
                    stack.extend(below.get(n, ()))
            out[start] = seen
        return out

    def _levels(self) -> dict[str, int]:
        level: dict[str, int] = {}

        def visit(n: str) -> int:
            if n not in level:
                level[n] = 1 + max((visit(m) for m in self.below[n]), default=0)
            return level[n]

        for n in sorted(self.nodes):
            visit(n)
        return level

    def compare(self, a: str, b: str) -> int | None:
        if a == b:
            return 0
        if b in self.below.get(a, ()):
            return 1
        if a in self.below.get(b, ()):
            return -1
        return None

    def linear(self) -> list[str]:
        return sorted(self.nodes, key=lambda n: (-self.level[n], n))


@dataclass
class PrecedenceMap:
    """Role and category precedence compiled from hierarchical policies and defaults."""

    role_pairs: tuple[tuple[str, str], ...] = ()
    category_pairs: tuple[tuple[str, str], ...] = ()
    default_roles: tuple[str, ...] = DEFAULT_ROLE_ORDER
    default_categories: tuple[str, ...] = tuple(c.value for c in DEFAULT_CATEGORY_ORDER)

    def __post_init__(self):
        try:
            self._roles = _Order(self.role_pairs, self.default_roles)
            self._categories = _Order(self.category_pairs, self.default_categories)
        except PrecedenceCycle:
            raise
        self._max_level = max(self._roles.level.values(), default=1)
        self._ranks: dict[str, Fraction] = {}

    @classmethod
    def compile(cls, policies=(), overrides: Iterable[tuple[str, str]] = (), **kwargs) -> "PrecedenceMap":
        role_pairs, cat_pairs = list(overrides), []
        for p in policies:
            if p.category is Category.HIERARCHICAL and isinstance(p.effect, Precedence):
                for hi, lo in p.effect.ordering:
                    (role_pairs if hi.kind == "role" else cat_pairs).append((hi.name, lo.name))
        return cls(tuple(role_pairs), tuple(cat_pairs), **kwargs)

    @classmethod
    def from_chains(cls, chains: Iterable[str], **kwargs) -> "PrecedenceMap":
        """Build from textual overrides such as ``"teacher > parent > student"``."""
        pairs = []
        for chain in chains:
            items = [s.strip() for s in chain.split(">")]
            if len(items) < 2 or not all(items):
                raise ValueError(f"bad precedence chain {chain!r}")
            pairs.extend(zip(items, items[1:]))
        return cls(role_pairs=tuple(pairs), **kwargs)

    def compare_roles(self, a: str, b: str) -> int:
        c = self._roles.compare(a, b)
        if c is None:
            raise IncomparableRoles(f"no precedence between {a!r} and {b!r}")
        return c

    def rank(self, role: str) -> Fraction:
        """1-based precedence level normalized to (0, 1]; unknown roles sit at the bottom."""
        r = self._ranks.get(role)
        if r is None:
            r = self._ranks[role] = Fraction(self._roles.level.get(role, 1), self._max_level)
        return r

    def role_order(self) -> list[str]:
        return self._roles.linear()

    def top_category(self, categories: Iterable[str]) -> str | None:
        cats = sorted(set(categories))
        if not cats:
            return None
        level = self._categories.level
        return max(cats, key=lambda c: (level.get(c, 0), [-ord(ch) for ch in c]))

    def category_rank(self, category: str | None) -> int:
        return self._categories.level.get(category, 0) if category else 0

    def to_dict(self) -> dict[str, Any]:
        return {"roles": self.role_order(), "categories": self._categories.linear()}


# --- protocols ---------------------------------------------------------------------


@dataclass(frozen=True)
class Hierarchical:
    def to_dict(self):
        return {"kind": "hierarchical"}


@dataclass(frozen=True)
class Weighted:
    weights: Mapping[str, float]

    def __post_init__(self):
        for role, w in self.weights.items():
            if not w > 0:
                raise ValueError(f"weight for {role!r} must be positive")

    def to_dict(self):
        return {"kind": "weighted", "weights": dict(sorted(self.weights.items()))}


@dataclass(frozen=True)
class Consensus:
    quorum: float = 0.75

    def __post_init__(self):
        if not 0.5 < self.quorum <= 1:
            raise ValueError("quorum must lie in (0.5, 1]")

    def to_dict(self):
        return {"kind": "consensus", "quorum": self.quorum}


Protocol = Hierarchical | Weighted | Consensus


def protocol_from_dict(d: Mapping[str, Any]) -> Protocol:
    kind = d.get("kind", "hierarchical")
    if kind == "hierarchical":
        return Hierarchical()
    if kind == "weighted":
        return Weighted(dict(d["weights"]))
    if kind == "consensus":
        return Consensus(float(d.get("quorum", 0.75)))
    raise ValueError(f"unknown protocol {kind!r}")


# --- assessments ----------------------------------------------------------------------


class Status(str, enum.Enum):
    RECOMMENDED = "recommended"
    ACCEPTABLE = "acceptable"
    DISQUALIFIED = "disqualified"
    NO_QUORUM = "no_quorum"


@dataclass(frozen=True)
class Concern:
    role: str
    category: str | None
    decision: Decision

    def to_dict(self):
        return {"role": self.role, "category": self.category, "decision": self.decision.value}


@dataclass(frozen=True)
class CandidateAssessment:
    candidate_id: str
    status: Status
    score: float
    risk: float
    concerns: tuple[Concern, ...] = ()
    conditions: tuple[str, ...] = ()
    missing_voters: tuple[str, ...] = ()
    prevailing_role: str | None = None
    prevailing_category: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "candidate_id": self.candidate_id,
            "status": self.status.value,
            "score": self.score,
            "risk": self.risk,
            "concerns": [c.to_dict() for c in self.concerns],
            "conditions": list(self.conditions),
            "missing_voters": list(self.missing_voters),
            "prevailing_role": self.prevailing_role,
            "prevailing_category": self.prevailing_category,
        }

    @classmethod
    def from_dict(cls, d) -> "CandidateAssessment":
        return cls(
            candidate_id=d["candidate_id"],
            status=Status(d["status"]),
            score=d["score"],
            risk=d["risk"],
            concerns=tuple(Concern(c["role"], c["category"], Decision(c["decision"])) for c in d["concerns"]),
            conditions=tuple(d.get("conditions", ())),
            missing_voters=tuple(d.get("missing_voters", ())),
            prevailing_role=d.get("prevailing_role"),
            prevailing_category=d.get("prevailing_category"),
        )


@dataclass(frozen=True)
class GovernanceAssessment:
    cycle_id: str
    candidates: tuple[CandidateAssessment, ...]
    recommended: str | None
    protocol: dict[str, Any]
    justification: str
    produced_at: datetime | None = None
    prevailing_role: str | None = None

    def candidate(self, candidate_id: str) -> CandidateAssessment:
        for c in self.candidates:
            if c.candidate_id == candidate_id:
                return c
        raise KeyError(candidate_id)

    @property
    def missing_voters(self) -> tuple[str, ...]:
        return tuple(sorted({m for c in self.candidates for m in c.missing_voters}))

    def to_dict(self) -> dict[str, Any]:
        return {
            "cycle_id": self.cycle_id,
            "candidates": [c.to_dict() for c in self.candidates],
            "recommended": self.recommended,
            "protocol": self.protocol,
            "justification": self.justification,
            "produced_at": self.produced_at.isoformat() if self.produced_at else None,
            "prevailing_role": self.prevailing_role,
        }

    @classmethod
    def from_dict(cls, d) -> "GovernanceAssessment":
        return cls(
            cycle_id=d["cycle_id"],
            candidates=tuple(CandidateAssessment.from_dict(c) for c in d["candidates"]),
            recommended=d["recommended"],
            protocol=d["protocol"],
            justification=d["justification"],
            produced_at=datetime.fromisoformat(d["produced_at"]) if d.get("produced_at") else None,
            prevailing_role=d.get("prevailing_role"),
        )

    def serialize(self) -> bytes:
        return canonical_json(self).encode("ascii")


# --- scoring ----------------------------------------------------------------------------


@functools.lru_cache(maxsize=4096)
def _exact(x: float) -> Fraction:
    return Fraction(x)


def _exact_sum(terms: Sequence[tuple[int, int]]) -> Fraction:
    """Exact sum of rationals given as (numerator, denominator) pairs, normalized once."""
    if not terms:
        return Fraction(0)
    den = math.lcm(*(d for _, d in terms))
    return Fraction(sum(n * (den // d) for n, d in terms), den)


def _weighted(votes: Sequence[Vote], weight_of) -> Fraction:
    nums, dens = [], []
    for v in votes:
        wn, wd = weight_of(v.role).as_integer_ratio()
        dens.append((wn, wd))
        value = VALUE[v.decision]
        if value:  # conditional votes add weight but no value
            cn, cd = v.confidence.as_integer_ratio()
            nums.append((value * wn * cn, wd * cd))
    den = _exact_sum(dens)
    return _exact_sum(nums) / den if den else Fraction(0)


def weighted_score(votes: Sequence[Vote], weights: Mapping[str, float]) -> float:
    """Weight- and confidence-weighted mean of vote values (+1, 0, -1)."""

    def weight_of(role):
        if role not in weights:
            raise MissingWeight(role)
        return Fraction(weights[role])

    return float(_weighted(votes, weight_of))


def _risk(votes: Sequence[Vote], prec: PrecedenceMap) -> Fraction:
    nums, dens = [], []
    for v in votes:
        rn, rd = prec.rank(v.role).as_integer_ratio()
        dens.append((rn, rd))
        if v.decision is not Decision.APPROVE:
            kn, kd = RISK_WEIGHT[v.decision].as_integer_ratio()
            cn, cd = v.confidence.as_integer_ratio()
            nums.append((rn * kn * cn, rd * kd * cd))
    den = _exact_sum(dens)
    return _exact_sum(nums) / den if den else Fraction(0)


def risk_score(votes: Sequence[Vote], prec: PrecedenceMap) -> float:
    """Precedence-weighted share of objection mass: rejects count fully, conditionals half."""
    return float(_risk(votes, prec))


def _vote_category(v: Vote, prec: PrecedenceMap) -> str | None:
    return prec.top_category(c for c, n in v.triggered_categories if n)


def _veto(votes: Sequence[Vote], prec: PrecedenceMap) -> Vote | None:
    """The prevailing reject, if some reject outranks or ties every approval."""
    approvals = [v for v in votes if v.decision is Decision.APPROVE]
    sustained = [
        r
        for r in votes
        if r.decision is Decision.REJECT and all(prec.compare_roles(r.role, a.role) >= 0 for a in approvals)
    ]
    if not sustained:
        return None
    return max(sustained, key=lambda r: (prec.rank(r.role), _neg(r.stakeholder_id)))


def _neg(s: str):
    return [-ord(ch) for ch in s]


def resolve_hierarchical(by_candidate: Mapping[str, Sequence[Vote]], prec: PrecedenceMap) -> dict[str, dict]:
    """Per-candidate status and exact score/risk under role precedence."""
    out = {}
    for cid, votes in by_candidate.items():
        veto = _veto(votes, prec)
        info = {
            "status": Status.DISQUALIFIED if veto else Status.ACCEPTABLE,
            "score": _weighted(votes, prec.rank),
            "risk": _risk(votes, prec),
            "prevailing": veto,
        }
        if veto is not None:
            vcat = prec.category_rank(_vote_category(veto, prec))
            for a in votes:
                if a.decision is Decision.APPROVE and prec.category_rank(_vote_category(a, prec)) > vcat:
                    log.info(
                        "candidate %s: role precedence of %s overrides category precedence of %s",
                        cid,
                        veto.role,
                        a.role,
                    )
        out[cid] = info
    return out


def resolve_weighted(by_candidate: Mapping[str, Sequence[Vote]], weights: Mapping[str, float], prec: PrecedenceMap):
    out = {}
    for cid, votes in by_candidate.items():
        fw = {}
        for v in votes:
            if v.role not in weights:
                raise MissingWeight(v.role)
            fw[v.role] = Fraction(weights[v.role])
        out[cid] = {
            "status": Status.ACCEPTABLE,
            "score": _weighted(votes, fw.__getitem__),
            "risk": _risk(votes, prec),
            "prevailing": None,
        }
    return out


def consensus_resolve(by_candidate: Mapping[str, Sequence[Vote]], quorum: float, prec: PrecedenceMap | None = None):
    """Acceptable iff no reject and the approval share reaches the quorum."""
    prec = prec or PrecedenceMap()
    q = Fraction(quorum)
    out = {}
    for cid, votes in by_candidate.items():
        approvals = sum(1 for v in votes if v.decision is Decision.APPROVE)
        rejects = [v for v in votes if v.decision is Decision.REJECT]
        ok = bool(votes) and not rejects and Fraction(approvals, len(votes)) >= q
        blocker = max(rejects, key=lambda r: (prec.rank(r.role), _neg(r.stakeholder_id))) if rejects else None
        out[cid] = {
            "status": Status.ACCEPTABLE if ok else Status.NO_QUORUM,
            "score": _weighted(votes, lambda _role: Fraction(1)),
            "risk": _risk(votes, prec),
            "maximin": min((VALUE[v.decision] * _exact(v.confidence) for v in votes), default=Fraction(0)),
            "prevailing": blocker,
        }
    return out


# --- negotiation ---------------------------------------------------------------------------


def negotiate(
    votes: Iterable[Vote],
    protocol: Protocol,
    prec: PrecedenceMap | None = None,
    *,
    candidates: Sequence[str] | None = None,
    expected_voters: Iterable[str] = (),
    cycle_id: str | None = None,
    produced_at: datetime | None = None,
) -> GovernanceAssessment:
    """Aggregate one cycle's votes into an advisory assessment."""
    prec = prec or PrecedenceMap()
    votes = sorted(votes, key=lambda v: (v.candidate_id, v.stakeholder_id))
    cycle_ids = {v.cycle_id for v in votes}
    if cycle_id is not None:
        cycle_ids.add(cycle_id)
    if len(cycle_ids) > 1:
        raise MixedCycleIds(sorted(cycle_ids))
    cycle = cycle_ids.pop() if cycle_ids else (cycle_id or "")
    cand_ids = sorted(set(candidates) if candidates is not None else {v.candidate_id for v in votes})
    if not cand_ids:
        raise EmptyCycle("no candidates to assess")
    unknown = {v.candidate_id for v in votes} - set(cand_ids)
    if unknown:
        raise NegotiationError(f"votes for unknown candidates {sorted(unknown)}")
    by_candidate = {cid: [v for v in votes if v.candidate_id == cid] for cid in cand_ids}

    if isinstance(protocol, Hierarchical):
        resolved = resolve_hierarchical(by_candidate, prec)
        eligible = [c for c in cand_ids if resolved[c]["status"] is not Status.DISQUALIFIED]

        def key(c):
            return (-resolved[c]["score"], resolved[c]["risk"], c)

    elif isinstance(protocol, Weighted):
        resolved = resolve_weighted(by_candidate, protocol.weights, prec)
        eligible = list(cand_ids)

        def key(c):
            return (-resolved[c]["score"], resolved[c]["risk"], c)

    elif isinstance(protocol, Consensus):
        resolved = consensus_resolve(by_candidate, protocol.quorum, prec)
        eligible = [c for c in cand_ids if resolved[c]["status"] is Status.ACCEPTABLE]

        def key(c):
            return (-resolved[c]["maximin"], -resolved[c]["score"], resolved[c]["risk"], c)

    else:
        raise TypeError(f"unknown protocol {protocol!r}")

    recommended = min(eligible, key=key) if eligible else None
    expected = sorted(set(expected_voters))
    assessed = []
    for cid in cand_ids:
        info = resolved[cid]
        cvotes = by_candidate[cid]
        status = Status.RECOMMENDED if cid == recommended else info["status"]
        objections = [v for v in cvotes if v.decision is not Decision.APPROVE]
        concerns = tuple(
            sorted(
                {Concern(v.role, _vote_category(v, prec), v.decision) for v in objections},
                key=lambda c: (c.role, c.category or "", c.decision.value),
            )
        )
        voted = {v.stakeholder_id for v in cvotes}
        prevailing = info["prevailing"]
        assessed.append(
            CandidateAssessment(
                candidate_id=cid,
                status=status,
                score=float(info["score"]),
                risk=float(info["risk"]),
                concerns=concerns,
                conditions=tuple(sorted({c for v in cvotes for c in v.conditions})),
                missing_voters=tuple(s for s in expected if s not in voted),
                prevailing_role=prevailing.role if prevailing else None,
                prevailing_category=_vote_category(prevailing, prec) if prevailing else None,
            )
        )

    vetoes = [a for a in assessed if a.prevailing_role and a.status is not Status.RECOMMENDED]
    if vetoes:
        cycle_prevailing = max((a.prevailing_role for a in vetoes), key=lambda r: (prec.rank(r), _neg(r)))
    elif votes:
        cycle_prevailing = max({v.role for v in votes}, key=lambda r: (prec.rank(r), _neg(r)))
    else:
        cycle_prevailing = None
    draft = GovernanceAssessment(
        cycle_id=cycle,
        candidates=tuple(assessed),
        recommended=recommended,
        protocol=protocol.to_dict(),
        justification="",
        produced_at=produced_at,
        prevailing_role=cycle_prevailing,
    )
    return GovernanceAssessment(
        cycle_id=draft.cycle_id,
        candidates=draft.candidates,
        recommended=draft.recommended,
        protocol=draft.protocol,
        justification=synthesize_justification(draft, prec, protocol),
        produced_at=draft.produced_at,
        prevailing_role=draft.prevailing_role,
    )


_CATEGORY_PHRASE = {
    "hard": "hard constraint",
    "temporal": "temporal rule",
    "soft": "soft preference",
    None: "unspecified rule class",
}


def _fmt(x: float) -> str:
    return f"{x:.4f}"


def synthesize_justification(assessment: GovernanceAssessment, prec: PrecedenceMap, protocol: Protocol) -> str:
    """Deterministic explanation of how votes were reconciled. Never includes policy content."""
    lines = []
    if isinstance(protocol, Hierarchical):
        lines.append(f"Protocol: hierarchical (role precedence {' > '.join(prec.role_order())}).")
    elif isinstance(protocol, Weighted):
        ws = ", ".join(f"{r}={w:g}" for r, w in sorted(protocol.weights.items()))
        lines.append(f"Protocol: weighted ({ws}).")
    else:
        lines.append(f"Protocol: consensus (quorum {protocol.quorum:g}).")
    if assessment.recommended:
        rec = assessment.candidate(assessment.recommended)
        lines.append(
            f"Recommended: {rec.candidate_id} (score {_fmt(rec.score)}, risk {_fmt(rec.risk)})."
        )
    else:
        lines.append("Recommended: none; every candidate was blocked, the tutoring system decides unaided.")
    for c in assessment.candidates:
        if c.status is Status.DISQUALIFIED:
            phrase = _CATEGORY_PHRASE.get(c.prevailing_category, c.prevailing_category)
            lines.append(
                f"Candidate {c.candidate_id} disqualified: a reject from {c.prevailing_role} ({phrase}) "
                f"took precedence under the hierarchical protocol."
            )
        elif c.status is Status.NO_QUORUM:
            if c.prevailing_role:
                lines.append(f"Candidate {c.candidate_id} did not reach consensus: blocked by a reject from {c.prevailing_role}.")
            else:
                lines.append(f"Candidate {c.candidate_id} did not reach consensus: approvals below quorum.")
        elif c.status is Status.ACCEPTABLE:
            lines.append(f"Candidate {c.candidate_id} acceptable (score {_fmt(c.score)}, risk {_fmt(c.risk)}).")
        if c.conditions:
            lines.append(f"Candidate {c.candidate_id} carries conditions: {', '.join(c.conditions)}.")
    missing = sorted({m for c in assessment.candidates for m in c.missing_voters})
    if missing:
        lines.append(f"Proceeded with partial input; missing voters: {', '.join(missing)}.")
    return "\n".join(lines)
