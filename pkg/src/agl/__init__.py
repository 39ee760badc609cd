"""Advisory governance layer for intelligent tutoring systems.

Stakeholder agents evaluate candidate actions against private policies, a
negotiator reconciles their votes, every decision lands in a hash-chained
ledger, and periodic scans look for drift, alert fatigue, steering bias and
homogenization. The host tutoring system always keeps the final choice.
"""

__version__ = "0.1.0"
