"""Per-step learning loop over a state-variable model.

One call to :func:`process_environment_step` consumes one observation and:

1. shifts state history and derives detector states from base events;
2. traverses conditioners in reverse computation order (detector-adjacent
   first), computing each state and adapting compositions - refining source
   sets on confirmations, splitting on heterogeneous targets, forming
   negative sources once on the first contradiction;
3. collects still-unexplained active SVs and forms one new conditioner over
   the eligible previously-active sources (exhaustive hypothesis, later
   narrowed by refinement);
4. prunes duplicate and empty conditioners.

Learning is strictly single-pass: no batch, no replay, no revisiting.
Sources are always evaluated against the previous step, targets against the
current one, so an "instance" (previous source states + current target
states) fully determines a conditioner's state; `replay_instance` recomputes
it purely, which is what the retention guarantee is stated over.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional

from .core import (
    ACTIVE,
    INACTIVE,
    UNOBSERVED,
    ConditioningSv,
    ContractError,
    Flag,
    InputError,
    Model,
    SvState,
    compute_dsv_states,
    computation_levels,
    sources_satisfied,
)
from .significance import RelationStats, apply_nce_blocking

__all__ = [
    "StepReport",
    "Instance",
    "InstanceRecorder",
    "process_environment_step",
    "compute_and_adapt_csv",
    "form_negative_connections",
    "generate_explanatory_csv",
    "trivial_sources",
    "duplicate_csv_by_targets",
    "model_refinement",
    "replay_instance",
    "def3_state",
]


@dataclass
class StepReport:
    step: int
    seed: bool = False
    new_csvs: list[int] = field(default_factory=list)
    refined: dict[int, list[int]] = field(default_factory=dict)
    duplications: list[tuple[int, int]] = field(default_factory=list)
    neg_formed: list[int] = field(default_factory=list)
    unexplained: list[int] = field(default_factory=list)
    flagged_possibly_conditional: list[int] = field(default_factory=list)
    pruned: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "seed": self.seed,
            "new_csvs": self.new_csvs,
            "refined": {str(k): v for k, v in sorted(self.refined.items())},
            "duplications": self.duplications,
            "neg_formed": self.neg_formed,
            "unexplained": self.unexplained,
            "flagged_possibly_conditional": self.flagged_possibly_conditional,
            "pruned": self.pruned,
        }


@dataclass
class Instance:
    """Previous source states and current target states of one conditioner
    at one step, as needed to replay its state decision."""

    csv_id: int
    step: int
    sources: dict[int, SvState]
    targets: dict[int, SvState]
    state: SvState


class InstanceRecorder:
    """Optional history capture for retention checks. Off the hot path;
    enable by passing an instance to process_environment_step."""

    def __init__(self) -> None:
        self.instances: dict[int, list[Instance]] = {}

    def record_step(self, model: Model, prev_states: Mapping[int, SvState]) -> None:
        for cid in sorted(model.csvs):
            csv = model.csvs[cid]
            inst = Instance(
                csv_id=cid,
                step=model.step_no,
                sources={
                    s: prev_states.get(s, UNOBSERVED)
                    for s in sorted(csv.pos_sources | csv.neg_sources)
                },
                targets={t: model.sv_state(t) for t in sorted(csv.targets)},
                state=csv.state,
            )
            self.instances.setdefault(cid, []).append(inst)


# -- pure state computation ---------------------------------------------------


def def3_state(
    pos_sources: set[int],
    neg_sources: set[int],
    prev_lookup: Mapping[int, SvState],
    target_states: Mapping[int, SvState],
) -> SvState:
    """Conditioner state from satisfaction and target states, no mutation."""
    satisfied = all(
        prev_lookup.get(s, UNOBSERVED) is ACTIVE for s in pos_sources
    ) and not any(prev_lookup.get(s, UNOBSERVED) is ACTIVE for s in neg_sources)
    if not satisfied or not target_states:
        return UNOBSERVED
    values = set(target_states.values())
    if INACTIVE not in values and ACTIVE in values:
        return ACTIVE
    if ACTIVE not in values and INACTIVE in values:
        return INACTIVE
    return UNOBSERVED


def replay_instance(csv: ConditioningSv, instance: Instance) -> SvState:
    """State the conditioner's *current* composition assigns to a past
    instance. Sources the conditioner has since dropped are simply ignored;
    sources absent from the record read as UNOBSERVED."""
    targets = {
        t: instance.targets[t] for t in csv.targets if t in instance.targets
    }
    return def3_state(csv.pos_sources, csv.neg_sources, instance.sources, targets)


# -- eligibility --------------------------------------------------------------


def trivial_sources(model: Model, sv_id: int) -> set[int]:
    """Sources rendered uninformative by what lies downstream of ``sv_id``:
    every SV reachable through conditioning targets contributes its source
    sets, reached detectors contribute themselves and their owner."""
    out: set[int] = set()
    start = model.csvs.get(sv_id)
    stack = sorted(start.targets) if start is not None else []
    seen: set[int] = set()
    while stack:
        x = stack.pop()
        if x in seen:
            continue
        seen.add(x)
        if x in model.csvs:
            c = model.csvs[x]
            out |= c.pos_sources | c.neg_sources
            stack.extend(sorted(c.targets))
        elif x in model.dsvs:
            out.add(x)
            out.add(model.dsvs[x].owner)
    return out


def _trivial_for_prospective(model: Model, target_id: int) -> set[int]:
    """Trivial set for a conditioner that WOULD target ``target_id``: the
    target itself and its own contribution, plus everything downstream."""
    out = trivial_sources(model, target_id)
    out.add(target_id)
    if target_id in model.csvs:
        c = model.csvs[target_id]
        out |= c.pos_sources | c.neg_sources
    elif target_id in model.dsvs:
        out.add(model.dsvs[target_id].owner)
    return out


def _upstream_pos_closure(model: Model, csv: ConditioningSv) -> set[int]:
    """Cumulative positive sources of the conditioner and all conditioners
    upstream of it (its conditioners, theirs, and so on), itself included."""
    out: set[int] = set()
    stack = [csv.id]
    seen: set[int] = set()
    while stack:
        cid = stack.pop()
        if cid in seen:
            continue
        seen.add(cid)
        c = model.csvs.get(cid)
        if c is None:
            continue
        out |= c.pos_sources
        stack.extend(sorted(model.conditioners_of(cid)))
    return out


def _active_source_ids(model: Model, prev_states: Mapping[int, SvState]) -> list[int]:
    ids = [b for b in model.bsvs if prev_states.get(b) is ACTIVE]
    ids += [d for d in model.dsvs if prev_states.get(d) is ACTIVE]
    return sorted(ids)


# -- adaptation operations ----------------------------------------------------


def _clone_csv(model: Model, csv: ConditioningSv, targets: set[int]) -> ConditioningSv:
    clone = ConditioningSv(
        id=model.fresh_id(),
        pos_sources=set(csv.pos_sources),
        neg_sources=set(csv.neg_sources),
        targets=set(targets),
        neg_formed=csv.neg_formed,
        flag=csv.flag,
        state=csv.state,
        prev_state=csv.prev_state,
        created_step=csv.created_step,
    )
    if model.config.inherit_stats_on_duplicate:
        clone.stats = {t: csv.stats[t].copy() for t in targets if t in csv.stats}
    model.register_csv(clone)
    return clone


def duplicate_csv_by_targets(
    model: Model, csv: ConditioningSv, target_states: Mapping[int, SvState]
) -> tuple[ConditioningSv, Optional[ConditioningSv]]:
    """Split a conditioner with both active and inactive targets this step.

    The original keeps the active targets, a sibling takes the inactive
    ones; unobserved targets go to both. Conditioners of the original also
    gain the sibling as target, so heterogeneity propagates upstream. No-op
    when targets are already homogeneous.
    """
    actives = {t for t, st in target_states.items() if st is ACTIVE}
    inactives = {t for t, st in target_states.items() if st is INACTIVE}
    if not actives or not inactives:
        return csv, None
    unobserved = set(target_states) - actives - inactives
    sibling = _clone_csv(model, csv, inactives | unobserved)
    model.retarget_csv(csv, actives | unobserved)
    csv.stats = {t: s for t, s in csv.stats.items() if t in csv.targets}
    for cond_id in sorted(model.conditioners_of(csv.id)):
        cond = model.csvs[cond_id]
        model.retarget_csv(cond, cond.targets | {sibling.id})
        if csv.id in cond.stats and model.config.inherit_stats_on_duplicate:
            cond.stats[sibling.id] = cond.stats[csv.id].copy()
    return csv, sibling


def form_negative_connections(
    model: Model,
    csv: ConditioningSv,
    prev_states: Mapping[int, SvState],
    report: StepReport,
) -> ConditioningSv:
    """One-shot negative-source formation on the first contradiction.

    Currently-unobserved targets are first moved to a protected duplicate
    (they carry no evidence about suppression). The contradicted remainder
    receives, as negative sources, everything active on the previous step
    except trivial sources and the cumulative upstream positive sources.
    """
    if csv.neg_formed:
        raise ContractError(f"negative sources already formed for CSV {csv.id}")
    unobserved = {t for t in csv.targets if model.sv_state(t) is UNOBSERVED}
    if unobserved:
        protected = _clone_csv(model, csv, unobserved)
        protected.state = UNOBSERVED
        model.retarget_csv(csv, csv.targets - unobserved)
        csv.stats = {t: s for t, s in csv.stats.items() if t in csv.targets}
        report.duplications.append((csv.id, protected.id))
    excluded = trivial_sources(model, csv.id)
    excluded |= csv.pos_sources | csv.neg_sources
    excluded |= _upstream_pos_closure(model, csv)
    candidates = [
        s for s in _active_source_ids(model, prev_states) if s not in excluded
    ]
    csv.neg_sources = set(candidates)
    csv.neg_formed = True
    report.neg_formed.append(csv.id)
    if candidates:
        # Suppression now explains the inactivity: conditions unsatisfied.
        csv.state = UNOBSERVED
    return csv


def _refine_on_confirmation(
    model: Model,
    csv: ConditioningSv,
    prev_states: Mapping[int, SvState],
    report: StepReport,
) -> None:
    drop_pos = {s for s in csv.pos_sources if prev_states.get(s) is not ACTIVE}
    drop_neg = {s for s in csv.neg_sources if prev_states.get(s) is ACTIVE}
    if drop_pos or drop_neg:
        csv.pos_sources -= drop_pos
        csv.neg_sources -= drop_neg
        report.refined.setdefault(csv.id, []).extend(sorted(drop_pos | drop_neg))
        model.revision += 1
        if model.config.stats_reset_on_change:
            for st in csv.stats.values():
                st.reset()


def _adapt_homogeneous(
    model: Model,
    csv: ConditioningSv,
    prev_states: Mapping[int, SvState],
    report: StepReport,
) -> None:
    states = {t: model.sv_state(t) for t in csv.targets}
    values = set(states.values())
    if not values or values == {UNOBSERVED}:
        csv.state = UNOBSERVED
        return
    if ACTIVE in values:
        csv.state = ACTIVE
        # Refinement keys on events: a target activity merely carried over
        # by persistence is not a fresh confirmation of the current context
        # (an idle step would otherwise strip the causal sources away).
        if any(
            states[t] is ACTIVE and model.sv_prev_state(t) is not ACTIVE
            for t in csv.targets
        ):
            _refine_on_confirmation(model, csv, prev_states, report)
        return
    # At least one inactive target, none active.
    if not all(prev_states.get(s) is ACTIVE for s in csv.pos_sources):
        csv.state = UNOBSERVED
        return
    active_negs = {s for s in csv.neg_sources if prev_states.get(s) is ACTIVE}
    if active_negs:
        csv.state = UNOBSERVED
        drop = csv.neg_sources - active_negs
        if drop:
            csv.neg_sources = active_negs
            report.refined.setdefault(csv.id, []).extend(sorted(drop))
            model.revision += 1
            if model.config.stats_reset_on_change:
                for st in csv.stats.values():
                    st.reset()
        return
    csv.state = INACTIVE
    if not csv.neg_formed:
        form_negative_connections(model, csv, prev_states, report)
    else:
        csv.raise_flag(Flag.CONDITIONAL)


def compute_and_adapt_csv(
    model: Model,
    csv: ConditioningSv,
    prev_states: Mapping[int, SvState],
    report: StepReport,
) -> SvState:
    """State computation plus in-place adaptation for one conditioner.

    Precondition: all targets already carry their state for this step
    (guaranteed by reverse-computation-order traversal).
    """
    satisfied_entry = sources_satisfied(csv, prev_states)
    for t in sorted(csv.targets):
        st = model.sv_state(t)
        csv.stats.setdefault(t, RelationStats()).record(
            ss=satisfied_entry,
            incidence=st is ACTIVE,
            observed=st is not UNOBSERVED,
        )
    if not any(prev_states.get(s) is ACTIVE for s in csv.pos_sources):
        csv.state = UNOBSERVED
        return csv.state
    states = {t: model.sv_state(t) for t in csv.targets}
    primary, sibling = duplicate_csv_by_targets(model, csv, states)
    if sibling is not None:
        report.duplications.append((primary.id, sibling.id))
    _adapt_homogeneous(model, primary, prev_states, report)
    if sibling is not None:
        _adapt_homogeneous(model, sibling, prev_states, report)
    return primary.state


def _compute_state_pure(
    model: Model, csv: ConditioningSv, prev_states: Mapping[int, SvState]
) -> None:
    csv.state = def3_state(
        csv.pos_sources,
        csv.neg_sources,
        prev_states,
        {t: model.sv_state(t) for t in csv.targets},
    )


# -- genesis and pruning ------------------------------------------------------


def generate_explanatory_csv(
    model: Model,
    unexplained: list[int],
    prev_states: Mapping[int, SvState],
    report: StepReport,
) -> Optional[ConditioningSv]:
    """One new conditioner over all eligible unexplained targets.

    Positive sources: everything active on the previous step that is
    informative (non-trivial) for at least one prospective target. Targets
    for which every remaining source is trivial are left out and marked
    possibly-conditional: they can apparently go active without explanation.
    """
    if not unexplained:
        return None
    blocked: set[int] = set()
    if model.config.nce_blocking:
        blocked = apply_nce_blocking(model, model.config.eps_t)
    prospective = [t for t in sorted(unexplained) if t not in blocked]
    if not prospective:
        return None
    trivial = {t: _trivial_for_prospective(model, t) for t in prospective}
    sources = [
        s
        for s in _active_source_ids(model, prev_states)
        if any(s not in trivial[t] for t in prospective)
    ]
    kept = [t for t in prospective if any(s not in trivial[t] for s in sources)]
    for t in prospective:
        if t not in kept:
            model.raise_target_flag(t, Flag.POSSIBLY_CONDITIONAL)
            report.flagged_possibly_conditional.append(t)
    if not kept:
        return None
    csv = ConditioningSv(
        id=model.fresh_id(),
        pos_sources=set(sources),
        targets=set(kept),
        created_step=model.step_no,
        state=ACTIVE,
        prev_state=UNOBSERVED,
    )
    for t in kept:
        st = RelationStats()
        st.record(ss=True, incidence=True, observed=True)
        csv.stats[t] = st
    model.register_csv(csv)
    report.new_csvs.append(csv.id)
    return csv


def model_refinement(model: Model, report: StepReport) -> None:
    """Prune conditioners that lost all sources or targets, and merge exact
    duplicates (same positive sources, negative sources, and targets),
    keeping the oldest. Cascades until stable."""
    while True:
        changed = False
        for cid in sorted(model.csvs):
            csv = model.csvs.get(cid)
            if csv is None:
                continue
            if not csv.pos_sources or not csv.targets:
                model.remove_csv(cid)
                report.pruned.append(cid)
                changed = True
        seen: dict[tuple, int] = {}
        for cid in sorted(model.csvs):
            csv = model.csvs[cid]
            key = (
                frozenset(csv.pos_sources),
                frozenset(csv.neg_sources),
                frozenset(csv.targets),
            )
            if key in seen:
                model.remove_csv(cid)
                report.pruned.append(cid)
                changed = True
            else:
                seen[key] = cid
        if not changed:
            return


def _collect_unexplained(model: Model) -> list[int]:
    # Only freshly-active SVs demand explanation: an activity carried over
    # by persistence was explained on its event step, and re-explaining it
    # each quiet step would mint a junk conditioner out of whatever action
    # happened to be taken.
    out = []
    for did in sorted(model.dsvs):
        dsv = model.dsvs[did]
        if dsv.state is ACTIVE and dsv.prev_state is not ACTIVE:
            if dsv.flag is not Flag.UNCONDITIONAL and not _has_active_conditioner(
                model, did
            ):
                out.append(did)
    for cid in sorted(model.csvs):
        csv = model.csvs[cid]
        if csv.state is ACTIVE and csv.prev_state is not ACTIVE:
            if csv.flag is not Flag.UNCONDITIONAL and not _has_active_conditioner(
                model, cid
            ):
                out.append(cid)
    return out


def _has_active_conditioner(model: Model, sv_id: int) -> bool:
    return any(
        model.csvs[c].state is ACTIVE
        for c in model.conditioners_of(sv_id)
        if c in model.csvs
    )


# -- the step -----------------------------------------------------------------


def _to_state(value) -> SvState:
    if isinstance(value, SvState):
        if value is UNOBSERVED:
            raise InputError("base variables cannot be reported UNOBSERVED")
        return value
    return ACTIVE if value else INACTIVE


def process_environment_step(
    model: Model,
    observations: Mapping[int, object],
    last_action: Optional[int] = None,
    *,
    learn: bool = True,
    recorder: Optional[InstanceRecorder] = None,
) -> StepReport:
    """Consume one observation; see the module docstring for the stages.

    ``observations`` assigns an active/inactive value to every non-action
    base variable. ``last_action`` names the action variable exercised
    between the previous observation and this one; it is recorded into the
    previous step, which is where source satisfaction reads it.

    The first call after construction or ``reset_context`` only seeds
    state tracking (detectors all UNOBSERVED, no learning).
    """
    report = StepReport(step=model.step_no)
    for bid, bsv in model.bsvs.items():
        if not bsv.is_action and bid not in observations:
            raise InputError(f"observation missing BSV {bid} ({bsv.label})")
    for bid in observations:
        if bid not in model.bsvs:
            raise InputError(f"observation for unknown BSV id {bid}")
        if model.bsvs[bid].is_action:
            raise InputError("action variables are reported via last_action")
    if last_action is not None and (
        last_action not in model.bsvs or not model.bsvs[last_action].is_action
    ):
        raise InputError(f"last_action {last_action} is not an action BSV")

    if not model.has_context:
        for bid, bsv in model.bsvs.items():
            st = INACTIVE if bsv.is_action else _to_state(observations[bid])
            bsv.state = bsv.prev_state = st
        for dsv in model.dsvs.values():
            dsv.state = dsv.prev_state = UNOBSERVED
        for csv in model.csvs.values():
            csv.state = csv.prev_state = UNOBSERVED
        model.has_context = True
        model.step_no += 1
        report.seed = True
        return report

    for bsv in model.bsvs.values():
        if bsv.is_action:
            bsv.prev_state = ACTIVE if bsv.id == last_action else INACTIVE
            bsv.state = INACTIVE
        else:
            bsv.prev_state = bsv.state
            bsv.state = _to_state(observations[bsv.id])
    prev_bsv = {b: sv.prev_state for b, sv in model.bsvs.items()}
    curr_bsv = {b: sv.state for b, sv in model.bsvs.items()}
    new_dsv = compute_dsv_states(model, prev_bsv, curr_bsv)
    for did, dsv in model.dsvs.items():
        dsv.prev_state = dsv.state
        dsv.state = new_dsv[did]
    for csv in model.csvs.values():
        csv.prev_state = csv.state
    prev_states = model.prev_states()

    for layer in computation_levels(model):
        for cid in layer:
            csv = model.csvs.get(cid)
            if csv is None:
                continue
            if learn:
                compute_and_adapt_csv(model, csv, prev_states, report)
            else:
                _compute_state_pure(model, csv, prev_states)

    if learn:
        unexplained = _collect_unexplained(model)
        report.unexplained = unexplained
        generate_explanatory_csv(model, unexplained, prev_states, report)
        model_refinement(model, report)
    if recorder is not None:
        recorder.record_step(model, prev_states)
    model.step_no += 1
    return report
