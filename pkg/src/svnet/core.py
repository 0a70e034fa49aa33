"""Core state-variable graph: base variables, change detectors, conditioners.

State semantics
---------------
Every state variable (SV) is ternary: ACTIVE, INACTIVE, or UNOBSERVED. The
values carry no arithmetic meaning; UNOBSERVED marks situations that create
no conflict with recorded structure and therefore trigger no learning.

Three SV kinds exist:

* ``BaseSv`` - externally observed boolean (never UNOBSERVED). Action
  variables are BaseSvs flagged ``is_action``; they carry no change
  detectors because the agent controls them.
* ``DynamicsSv`` - activation/deactivation detector owned by a BaseSv. A
  detector is ACTIVE on the step its event happens, INACTIVE when the event
  was possible but did not happen, UNOBSERVED when the owner already sits
  in the post-event state. An ACTIVE detector persists across steps while
  no event occurs anywhere (see ``_persistence_window_open``).
* ``ConditioningSv`` - a learned relation: positive/negative source sets
  over base variables and detectors, and a target set of detectors or other
  conditioners. Sources are evaluated against the *previous* step; targets
  against the current one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Optional

__all__ = [
    "SvState",
    "ACTIVE",
    "INACTIVE",
    "UNOBSERVED",
    "Flag",
    "StructuralError",
    "InputError",
    "ContractError",
    "BaseSv",
    "DynamicsSv",
    "ConditioningSv",
    "Model",
    "ModelConfig",
    "compute_dsv_states",
    "sources_satisfied",
    "computation_levels",
]


class SvState(Enum):
    ACTIVE = 1
    INACTIVE = -1
    UNOBSERVED = 0


ACTIVE = SvState.ACTIVE
INACTIVE = SvState.INACTIVE
UNOBSERVED = SvState.UNOBSERVED


class Flag(Enum):
    """Unconditionality marker; transitions are monotone left to right:
    UNCONDITIONAL -> CONDITIONAL -> POSSIBLY_CONDITIONAL."""

    UNCONDITIONAL = "unconditional"
    CONDITIONAL = "conditional"
    POSSIBLY_CONDITIONAL = "possibly_conditional"


_FLAG_ORDER = {
    Flag.UNCONDITIONAL: 0,
    Flag.CONDITIONAL: 1,
    Flag.POSSIBLY_CONDITIONAL: 2,
}


class StructuralError(RuntimeError):
    """The model graph violated a structural invariant (cycle, dangling id)."""


class InputError(ValueError):
    """Malformed external input (incomplete observation, bad file)."""


class ContractError(RuntimeError):
    """An operation was called outside its precondition."""


@dataclass
class BaseSv:
    id: int
    label: str
    is_action: bool = False
    state: SvState = INACTIVE
    prev_state: SvState = INACTIVE
    a_dsv: Optional[int] = None
    d_dsv: Optional[int] = None


@dataclass
class DynamicsSv:
    id: int
    owner: int
    kind: str  # "A" (activation) or "D" (deactivation)
    state: SvState = UNOBSERVED
    prev_state: SvState = UNOBSERVED
    # Detectors start CONDITIONAL: they have never been seen active, so no
    # claim of unconditional activity can be made for them.
    flag: Flag = Flag.CONDITIONAL


@dataclass
class ConditioningSv:
    id: int
    pos_sources: set[int] = field(default_factory=set)
    neg_sources: set[int] = field(default_factory=set)
    targets: set[int] = field(default_factory=set)
    neg_formed: bool = False
    flag: Flag = Flag.UNCONDITIONAL
    state: SvState = UNOBSERVED
    prev_state: SvState = UNOBSERVED
    stats: dict[int, "RelationStats"] = field(default_factory=dict)
    created_step: int = 0

    def raise_flag(self, new: Flag) -> None:
        if _FLAG_ORDER[new] > _FLAG_ORDER[self.flag]:
            self.flag = new


@dataclass
class ModelConfig:
    nce_blocking: bool = False
    eps_t: float = 0.25
    stats_reset_on_change: bool = False
    inherit_stats_on_duplicate: bool = True


class Model:
    """Mutable container for one state-variable graph.

    Single-owner: all mutation happens on one logical thread. Conditioning
    edges always point from a conditioner to a pre-existing SV, so the
    conditioning graph stays acyclic by construction.
    """

    def __init__(self, config: Optional[ModelConfig] = None):
        self.bsvs: dict[int, BaseSv] = {}
        self.dsvs: dict[int, DynamicsSv] = {}
        self.csvs: dict[int, ConditioningSv] = {}
        self.config = config or ModelConfig()
        self._next_id = 0
        self._cond_index: dict[int, set[int]] = {}  # target id -> conditioner csv ids
        self.labels: dict[int, str] = {}
        self.by_label: dict[str, int] = {}
        self.step_no = 0
        self.has_context = False
        self.revision = 0

    # -- construction -----------------------------------------------------

    def fresh_id(self) -> int:
        i = self._next_id
        self._next_id += 1
        return i

    def add_bsv(self, label: str, is_action: bool = False) -> int:
        if label in self.by_label:
            raise InputError(f"duplicate BSV label {label!r}")
        bid = self.fresh_id()
        bsv = BaseSv(id=bid, label=label, is_action=is_action)
        self.bsvs[bid] = bsv
        self.labels[bid] = label
        self.by_label[label] = bid
        if not is_action:
            for kind, attr in (("A", "a_dsv"), ("D", "d_dsv")):
                did = self.fresh_id()
                self.dsvs[did] = DynamicsSv(id=did, owner=bid, kind=kind)
                setattr(bsv, attr, did)
                self.labels[did] = f"{label}:{kind}"
        self.revision += 1
        return bid

    # -- lookups -----------------------------------------------------------

    def sv_state(self, sv_id: int) -> SvState:
        for store in (self.bsvs, self.dsvs, self.csvs):
            sv = store.get(sv_id)
            if sv is not None:
                return sv.state
        raise StructuralError(f"unknown SV id {sv_id}")

    def sv_prev_state(self, sv_id: int) -> SvState:
        for store in (self.bsvs, self.dsvs, self.csvs):
            sv = store.get(sv_id)
            if sv is not None:
                return sv.prev_state
        raise StructuralError(f"unknown SV id {sv_id}")

    def is_source_id(self, sv_id: int) -> bool:
        return sv_id in self.bsvs or sv_id in self.dsvs

    def conditioners_of(self, sv_id: int) -> set[int]:
        return self._cond_index.get(sv_id, set())

    def target_flag(self, sv_id: int) -> Flag:
        if sv_id in self.dsvs:
            return self.dsvs[sv_id].flag
        if sv_id in self.csvs:
            return self.csvs[sv_id].flag
        raise StructuralError(f"SV {sv_id} cannot carry a flag")

    def raise_target_flag(self, sv_id: int, flag: Flag) -> None:
        sv = self.dsvs.get(sv_id) or self.csvs.get(sv_id)
        if sv is None:
            raise StructuralError(f"SV {sv_id} cannot carry a flag")
        if isinstance(sv, DynamicsSv):
            if _FLAG_ORDER[flag] > _FLAG_ORDER[sv.flag]:
                sv.flag = flag
        else:
            sv.raise_flag(flag)

    # -- mutation helpers --------------------------------------------------

    def register_csv(self, csv: ConditioningSv) -> None:
        self.csvs[csv.id] = csv
        for t in csv.targets:
            self._cond_index.setdefault(t, set()).add(csv.id)
        self.revision += 1

    def retarget_csv(self, csv: ConditioningSv, targets: Iterable[int]) -> None:
        for t in csv.targets:
            self._cond_index.get(t, set()).discard(csv.id)
        csv.targets = set(targets)
        for t in csv.targets:
            self._cond_index.setdefault(t, set()).add(csv.id)
        self.revision += 1

    def remove_csv(self, csv_id: int) -> None:
        csv = self.csvs.pop(csv_id)
        for t in csv.targets:
            self._cond_index.get(t, set()).discard(csv_id)
        # Conditioners of the removed CSV lose one target each.
        for cond_id in sorted(self.conditioners_of(csv_id)):
            cond = self.csvs.get(cond_id)
            if cond is not None:
                cond.targets.discard(csv_id)
                cond.stats.pop(csv_id, None)
        self._cond_index.pop(csv_id, None)
        self.revision += 1

    def reset_context(self) -> None:
        """Forget step-to-step temporal context (not the learned structure).

        The next processed observation seeds previous-state tracking: all
        detectors come out UNOBSERVED and no learning happens on that step.
        """
        self.has_context = False

    # -- snapshots ----------------------------------------------------------

    def bsv_states(self) -> dict[int, SvState]:
        return {b: sv.state for b, sv in self.bsvs.items()}

    def current_states(self) -> dict[int, SvState]:
        out: dict[int, SvState] = {}
        for store in (self.bsvs, self.dsvs, self.csvs):
            for i, sv in store.items():
                out[i] = sv.state
        return out

    def prev_states(self) -> dict[int, SvState]:
        out: dict[int, SvState] = {}
        for store in (self.bsvs, self.dsvs, self.csvs):
            for i, sv in store.items():
                out[i] = sv.prev_state
        return out


# -- pure operations --------------------------------------------------------


def _raw_dsv_state(kind: str, prev: SvState, curr: SvState) -> SvState:
    if kind == "A":
        if prev is ACTIVE:
            return UNOBSERVED  # owner already active: activation undefined
        return ACTIVE if curr is ACTIVE else INACTIVE
    if kind == "D":
        if prev is INACTIVE:
            return UNOBSERVED
        return ACTIVE if curr is INACTIVE else INACTIVE
    raise StructuralError(f"bad detector kind {kind!r}")


def _persistence_window_open(events: set[int]) -> bool:
    """Whether previously-active detectors persist through this step.

    Scope decision: persistence is model-wide - an active detector stays
    active until the next step in which *any* non-action base variable has
    an event. Flip this predicate to a per-owner rule to change the scope.
    """
    return not events


def compute_dsv_states(
    model: Model,
    previous_bsv_states: Mapping[int, SvState],
    current_bsv_states: Mapping[int, SvState],
) -> dict[int, SvState]:
    """Detector states from two consecutive base-variable snapshots.

    Pure with respect to the model graph: reads structure plus detectors'
    previous states, returns the new detector states without applying them.
    """
    events: set[int] = set()
    for bid, bsv in model.bsvs.items():
        if bsv.is_action:
            continue
        if bid not in previous_bsv_states or bid not in current_bsv_states:
            raise InputError(f"snapshot missing BSV {bid} ({bsv.label})")
        if previous_bsv_states[bid] is not current_bsv_states[bid]:
            events.add(bid)
    persist = _persistence_window_open(events)
    out: dict[int, SvState] = {}
    for did, dsv in model.dsvs.items():
        prev = previous_bsv_states[dsv.owner]
        curr = current_bsv_states[dsv.owner]
        raw = _raw_dsv_state(dsv.kind, prev, curr)
        if persist and dsv.state is ACTIVE:
            out[did] = ACTIVE
        else:
            out[did] = raw
    return out


def sources_satisfied(
    csv: ConditioningSv, previous_step_states: Mapping[int, SvState]
) -> bool:
    """All positive sources active and no negative source active, evaluated
    on the previous step. Vacuously true on empty sets."""
    for s in csv.pos_sources:
        if previous_step_states.get(s, UNOBSERVED) is not ACTIVE:
            return False
    for s in csv.neg_sources:
        if previous_step_states.get(s, UNOBSERVED) is ACTIVE:
            return False
    return True


def computation_levels(model: Model) -> list[list[int]]:
    """Layer conditioners by distance from the detectors they explain.

    Layer 0 holds conditioners that target detectors only; layer k holds
    those whose deepest conditioner target sits in layer k-1. The returned
    order (layer 0 first) is the traversal order for state computation.
    """
    level: dict[int, int] = {}

    def level_of(cid: int, trail: tuple[int, ...] = ()) -> int:
        if cid in level:
            return level[cid]
        if cid in trail:
            raise StructuralError(f"conditioning cycle through CSV {cid}")
        csv = model.csvs[cid]
        best = 0
        for t in csv.targets:
            if t in model.csvs:
                best = max(best, level_of(t, trail + (cid,)) + 1)
        level[cid] = best
        return best

    for cid in model.csvs:
        level_of(cid)
    if not level:
        return []
    layers: list[list[int]] = [[] for _ in range(max(level.values()) + 1)]
    for cid in sorted(level):
        layers[level[cid]].append(cid)
    return layers
