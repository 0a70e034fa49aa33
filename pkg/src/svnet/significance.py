"""Per-relation event statistics and significance filtering.

Each (conditioner, target) pair tracks four counters, updated only on steps
where the target is observed. From them two filters are derived:

* normalized causal effect (NCE) for the base modeller: relative increase
  in target-incidence probability given source satisfaction. Relations with
  small |NCE| on every target can be *blocked* - skipped as prospective
  targets of new conditioners - but are never removed.
* a conditional-probability check for network-refinement models, which
  *removes* a conditioner when P(sources satisfied | target incidence)
  falls below a threshold.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional

if TYPE_CHECKING:
    from .core import Model

__all__ = ["RelationStats", "nce", "apply_nce_blocking", "mnr_filter_check"]


@dataclass
class RelationStats:
    n_observed: int = 0  # steps with the target observed (active or inactive)
    n_ss: int = 0  # ... and sources satisfied
    n_incidence: int = 0  # ... and target incident
    n_concurrence: int = 0  # ... and both

    def record(self, ss: bool, incidence: bool, observed: bool) -> None:
        if not observed:
            return
        self.n_observed += 1
        if ss:
            self.n_ss += 1
        if incidence:
            self.n_incidence += 1
        if ss and incidence:
            self.n_concurrence += 1

    def reset(self) -> None:
        self.n_observed = self.n_ss = self.n_incidence = self.n_concurrence = 0

    def copy(self) -> "RelationStats":
        return RelationStats(
            self.n_observed, self.n_ss, self.n_incidence, self.n_concurrence
        )

    def nce(self) -> Optional[float]:
        """Relative probability increase; None while undefined (no
        satisfactions or no incidences yet)."""
        if self.n_ss == 0 or self.n_incidence == 0:
            return None
        p_i = self.n_incidence / self.n_observed
        p_i_given_ss = self.n_concurrence / self.n_ss
        return (p_i_given_ss - p_i) / p_i

    def p_incidence_given_ss(self) -> Optional[float]:
        if self.n_ss == 0:
            return None
        return self.n_concurrence / self.n_ss

    def p_ss_given_incidence(self) -> Optional[float]:
        if self.n_incidence == 0:
            return None
        return self.n_concurrence / self.n_incidence


def nce(stats: RelationStats) -> Optional[float]:
    return stats.nce()


def csv_is_blocked(csv, eps_t: float) -> bool:
    """True when every target's NCE is defined and below threshold in
    magnitude. Undefined NCEs count as significant (transients must not
    block a relation before the data is in)."""
    if not csv.targets:
        return False
    for t in csv.targets:
        stats = csv.stats.get(t)
        value = stats.nce() if stats is not None else None
        if value is None or abs(value) >= eps_t:
            return False
    return True


def apply_nce_blocking(model: "Model", eps_t: float) -> set[int]:
    """Conditioners currently blocked from receiving upstream conditioners.

    Recomputed from live counters, so blocking reverses on its own if later
    data pushes |NCE| back above the threshold.
    """
    if eps_t <= 0:
        raise ValueError("eps_t must be positive")
    return {cid for cid, csv in model.csvs.items() if csv_is_blocked(csv, eps_t)}


def mnr_filter_check(stats: RelationStats, eps_sign: float) -> bool:
    """Keep/remove decision for a network-refinement conditioner.

    Returns True (keep) while there is no incidence data; removes once
    P(SS|I) drops below eps_sign.
    """
    p = stats.p_ss_given_incidence()
    if p is None:
        return True
    return p >= eps_sign
