import random

import pytest

from svnet.core import (
    ACTIVE,
    INACTIVE,
    UNOBSERVED,
    ConditioningSv,
    ContractError,
    Flag,
    InputError,
    Model,
)
from svnet.learning import (
    duplicate_csv_by_targets,
    form_negative_connections,
    model_refinement,
    process_environment_step,
    trivial_sources,
    StepReport,
)


def fig1_model():
    m = Model()
    ids = [m.add_bsv(n) for n in ("X0", "X1", "X2", "X3", "Y")]
    return m, ids


def obs(ids, *vals):
    return dict(zip(ids, vals))


def present(m, pre, post):
    """One independent exposure: seed the context, then observe the outcome."""
    m.reset_context()
    process_environment_step(m, pre)
    return process_environment_step(m, post)


def csv_shapes(m):
    return sorted(
        (
            tuple(sorted(c.pos_sources)),
            tuple(sorted(c.neg_sources)),
            tuple(sorted(c.targets)),
            c.flag,
            c.neg_formed,
        )
        for c in m.csvs.values()
    )


FIG1_SEQUENCE = [
    # (pre X0..X3 Y, post X0..X3 Y): X0,X1 -> Y; X0 -> Y; X0,X2,X3 -> !Y; X0,X2 -> !Y
    ((1, 1, 0, 0, 0), (1, 1, 0, 0, 1)),
    ((1, 0, 0, 0, 0), (1, 0, 0, 0, 1)),
    ((1, 0, 1, 1, 0), (1, 0, 1, 1, 0)),
    ((1, 0, 1, 0, 0), (1, 0, 1, 0, 0)),
]


class TestFig1Convergence:
    def run_sequence(self, m, ids):
        for pre, post in FIG1_SEQUENCE:
            present(m, obs(ids, *pre), obs(ids, *post))

    def test_first_exposure_hypothesizes_both_sources(self):
        m, ids = fig1_model()
        pre, post = FIG1_SEQUENCE[0]
        report = present(m, obs(ids, *pre), obs(ids, *post))
        assert len(report.new_csvs) == 1
        (c,) = m.csvs.values()
        y_act = m.bsvs[ids[4]].a_dsv
        assert c.pos_sources == {ids[0], ids[1]}
        assert c.targets == {y_act}
        assert c.neg_sources == set()

    def test_second_exposure_refines_unnecessary_source(self):
        m, ids = fig1_model()
        for pre, post in FIG1_SEQUENCE[:2]:
            present(m, obs(ids, *pre), obs(ids, *post))
        (c,) = m.csvs.values()
        assert c.pos_sources == {ids[0]}

    def test_suppression_hypothesis_then_refinement(self):
        m, ids = fig1_model()
        for pre, post in FIG1_SEQUENCE[:3]:
            present(m, obs(ids, *pre), obs(ids, *post))
        (c,) = m.csvs.values()
        assert c.neg_sources == {ids[2], ids[3]} and c.neg_formed
        present(m, obs(ids, *FIG1_SEQUENCE[3][0]), obs(ids, *FIG1_SEQUENCE[3][1]))
        (c,) = m.csvs.values()
        assert c.neg_sources == {ids[2]}

    def test_converged_model_is_stable_under_all_repeats(self):
        m, ids = fig1_model()
        self.run_sequence(m, ids)
        assert len(m.csvs) == 1
        (c,) = m.csvs.values()
        assert c.pos_sources == {ids[0]} and c.neg_sources == {ids[2]}
        before = csv_shapes(m)
        for pre, post in FIG1_SEQUENCE:
            present(m, obs(ids, *pre), obs(ids, *post))
            assert csv_shapes(m) == before

    def test_quiet_step_creates_nothing(self):
        m, ids = fig1_model()
        m.reset_context()
        process_environment_step(m, obs(ids, 0, 0, 0, 0, 0))
        report = process_environment_step(m, obs(ids, 0, 0, 0, 0, 0))
        assert not report.new_csvs and not report.unexplained


class TestUpstreamConditioning:
    def fig2_model(self):
        m = Model()
        ids = [m.add_bsv(n) for n in ("X0", "X1", "X2", "X3", "Y", "X4", "X5")]
        for pre, post in FIG1_SEQUENCE:
            present(m, obs(ids[:5], *pre) | {ids[5]: 0, ids[6]: 0},
                    obs(ids[:5], *post) | {ids[5]: 0, ids[6]: 0})
        return m, ids

    def test_conditional_flag_after_unexplained_inactivity(self):
        m, ids = self.fig2_model()
        # X0 alone, no suppressor, yet Y does not activate -> conditional.
        present(m, obs(ids, 1, 0, 0, 0, 0, 0, 0), obs(ids, 1, 0, 0, 0, 0, 0, 0))
        (c,) = m.csvs.values()
        assert c.flag is Flag.CONDITIONAL

    def test_new_conditioner_over_active_eligible_sources(self):
        m, ids = self.fig2_model()
        present(m, obs(ids, 1, 0, 0, 0, 0, 0, 0), obs(ids, 1, 0, 0, 0, 0, 0, 0))
        (c0,) = m.csvs.values()
        # X0, !X2, X4, X5 -> Y: C0 fires but is conditional and unexplained.
        present(
            m,
            obs(ids, 1, 0, 0, 0, 0, 1, 1),
            obs(ids, 1, 0, 0, 0, 1, 1, 1),
        )
        uplinks = [c for c in m.csvs.values() if c0.id in c.targets]
        assert len(uplinks) == 1
        (c1,) = uplinks
        # X0 is C0's own positive source (trivial); X4, X5 are the news.
        assert c1.pos_sources == {ids[5], ids[6]}

    def test_alternative_conditioners_accumulate(self):
        m, ids = self.fig2_model()
        present(m, obs(ids, 1, 0, 0, 0, 0, 0, 0), obs(ids, 1, 0, 0, 0, 0, 0, 0))
        (c0,) = m.csvs.values()
        present(m, obs(ids, 1, 0, 0, 0, 0, 1, 1), obs(ids, 1, 0, 0, 0, 1, 1, 1))
        # A different context also explains C0 -> disjunctive alternative.
        present(m, obs(ids, 1, 0, 0, 1, 0, 0, 0), obs(ids, 1, 0, 0, 1, 1, 0, 0))
        uplinks = [c for c in m.csvs.values() if c0.id in c.targets]
        assert len(uplinks) == 2


class TestTrivialSources:
    def chain_model(self):
        m = Model()
        b = [m.add_bsv(f"B{i}") for i in range(5)]
        d2 = m.bsvs[b[2]].a_dsv
        c0 = ConditioningSv(id=m.fresh_id(), pos_sources={b[0]}, targets={d2})
        m.register_csv(c0)
        c1 = ConditioningSv(id=m.fresh_id(), pos_sources={b[1]}, targets={c0.id})
        m.register_csv(c1)
        return m, b, c0, c1, d2

    def test_downstream_sources_and_owner(self):
        m, b, c0, c1, d2 = self.chain_model()
        triv = trivial_sources(m, c1.id)
        assert {b[0], b[2], d2} <= triv
        assert b[1] not in triv

    def test_no_targets_gives_empty(self):
        m, b, c0, c1, d2 = self.chain_model()
        dangling = ConditioningSv(id=m.fresh_id(), pos_sources={b[3]})
        m.register_csv(dangling)
        assert trivial_sources(m, dangling.id) == set()

    def test_matches_reachability_oracle_on_chain(self):
        m = Model()
        b = [m.add_bsv(f"B{i}") for i in range(6)]
        prev_target = m.bsvs[b[0]].a_dsv
        csvs = []
        for i in range(5):
            c = ConditioningSv(
                id=m.fresh_id(), pos_sources={b[i + 1]}, targets={prev_target}
            )
            m.register_csv(c)
            csvs.append(c)
            prev_target = c.id

        def oracle(start):
            out, stack, seen = set(), [start], set()
            first = True
            while stack:
                x = stack.pop()
                if x in seen:
                    continue
                seen.add(x)
                if x in m.csvs:
                    if not first:
                        out |= m.csvs[x].pos_sources | m.csvs[x].neg_sources
                    stack.extend(m.csvs[x].targets)
                elif x in m.dsvs:
                    out |= {x, m.dsvs[x].owner}
                first = False
            return out

        for c in csvs:
            assert trivial_sources(m, c.id) == oracle(c.id)


class TestDuplication:
    def split_model(self):
        m = Model()
        b = [m.add_bsv(f"B{i}") for i in range(4)]
        d = [m.bsvs[x].a_dsv for x in b]
        csv = ConditioningSv(
            id=m.fresh_id(), pos_sources={b[0]}, targets={d[1], d[2], d[3]}
        )
        m.register_csv(csv)
        return m, b, d, csv

    def test_partition_shares_unobserved(self):
        m, b, d, csv = self.split_model()
        states = {d[1]: ACTIVE, d[2]: INACTIVE, d[3]: UNOBSERVED}
        primary, sibling = duplicate_csv_by_targets(m, csv, states)
        assert primary.targets == {d[1], d[3]}
        assert sibling.targets == {d[2], d[3]}
        assert sibling.pos_sources == primary.pos_sources

    def test_homogeneous_targets_noop(self):
        m, b, d, csv = self.split_model()
        states = {d[1]: ACTIVE, d[2]: ACTIVE, d[3]: ACTIVE}
        primary, sibling = duplicate_csv_by_targets(m, csv, states)
        assert sibling is None and primary is csv

    def test_upstream_conditioner_gains_sibling_target(self):
        m, b, d, csv = self.split_model()
        up = ConditioningSv(id=m.fresh_id(), pos_sources={b[0]}, targets={csv.id})
        m.register_csv(up)
        states = {d[1]: ACTIVE, d[2]: INACTIVE, d[3]: UNOBSERVED}
        primary, sibling = duplicate_csv_by_targets(m, csv, states)
        assert {primary.id, sibling.id} <= up.targets


class TestNegativeFormation:
    def test_called_twice_is_contract_violation(self):
        m = Model()
        b = m.add_bsv("B")
        d = m.bsvs[b].a_dsv
        csv = ConditioningSv(id=m.fresh_id(), pos_sources={b}, targets={d})
        m.register_csv(csv)
        csv.neg_formed = True
        with pytest.raises(ContractError):
            form_negative_connections(m, csv, {}, StepReport(step=0))

    def test_own_positive_sources_filtered(self):
        # Active set {X2, X0(own pos)} -> neg {X2}.
        m = Model()
        x0, x2, y = (m.add_bsv(n) for n in ("X0", "X2", "Y"))
        d = m.bsvs[y].a_dsv
        csv = ConditioningSv(id=m.fresh_id(), pos_sources={x0}, targets={d})
        m.register_csv(csv)
        report = StepReport(step=0)
        form_negative_connections(
            m, csv, {x0: ACTIVE, x2: ACTIVE}, report
        )
        assert csv.neg_sources == {x2}

    def test_nothing_eligible_leaves_empty_negs_then_conditional(self):
        m = Model()
        ids = [m.add_bsv(n) for n in ("X0", "Y")]
        present(m, obs(ids, 1, 0), obs(ids, 1, 1))
        present(m, obs(ids, 1, 0), obs(ids, 1, 0))  # X0 alone -> !Y
        (c,) = m.csvs.values()
        assert c.neg_formed and c.neg_sources == set()
        assert c.flag is Flag.UNCONDITIONAL
        present(m, obs(ids, 1, 0), obs(ids, 1, 0))  # second contradiction
        (c,) = m.csvs.values()
        assert c.flag is Flag.CONDITIONAL

    def test_protected_duplicate_for_unobserved_targets(self):
        m = Model()
        x0, ya, yb = (m.add_bsv(n) for n in ("X0", "YA", "YB"))
        da, db = m.bsvs[ya].a_dsv, m.bsvs[yb].a_dsv
        csv = ConditioningSv(id=m.fresh_id(), pos_sources={x0}, targets={da, db})
        m.register_csv(csv)
        m.dsvs[da].state = INACTIVE
        m.dsvs[db].state = UNOBSERVED
        report = StepReport(step=0)
        form_negative_connections(m, csv, {x0: ACTIVE}, report)
        assert csv.targets == {da}
        (prot,) = [c for c in m.csvs.values() if c.id != csv.id]
        assert prot.targets == {db} and not prot.neg_formed


class TestPruning:
    def test_exact_duplicates_merged(self):
        m = Model()
        b = m.add_bsv("B")
        d = m.bsvs[b].a_dsv
        c1 = ConditioningSv(id=m.fresh_id(), pos_sources={b}, targets={d})
        c2 = ConditioningSv(id=m.fresh_id(), pos_sources={b}, targets={d})
        m.register_csv(c1)
        m.register_csv(c2)
        model_refinement(m, StepReport(step=0))
        assert list(m.csvs) == [c1.id]

    def test_empty_source_or_target_removed_with_cascade(self):
        m = Model()
        b = m.add_bsv("B")
        d = m.bsvs[b].a_dsv
        c0 = ConditioningSv(id=m.fresh_id(), pos_sources=set(), targets={d})
        m.register_csv(c0)
        c1 = ConditioningSv(id=m.fresh_id(), pos_sources={b}, targets={c0.id})
        m.register_csv(c1)
        model_refinement(m, StepReport(step=0))
        assert not m.csvs  # c0 empty-pos, then c1 left targetless

    def test_random_run_has_no_duplicate_shapes(self):
        rng = random.Random(7)
        m = Model()
        ids = [m.add_bsv(f"B{i}") for i in range(5)]
        m.reset_context()
        process_environment_step(m, {i: rng.random() < 0.5 for i in ids})
        for _ in range(50):
            process_environment_step(m, {i: rng.random() < 0.5 for i in ids})
        shapes = [
            (
                frozenset(c.pos_sources),
                frozenset(c.neg_sources),
                frozenset(c.targets),
            )
            for c in m.csvs.values()
        ]
        assert len(shapes) == len(set(shapes))
        # No dangling ids either.
        for c in m.csvs.values():
            for t in c.targets:
                assert t in m.csvs or t in m.dsvs


class TestStepContracts:
    def test_incomplete_observation_rejected(self):
        m = Model()
        m.add_bsv("B0")
        m.add_bsv("B1")
        m.reset_context()
        with pytest.raises(InputError):
            process_environment_step(m, {0: True})

    def test_one_step_consistency(self):
        rng = random.Random(3)
        m = Model()
        ids = [m.add_bsv(f"B{i}") for i in range(6)]
        m.reset_context()
        process_environment_step(m, {i: rng.random() < 0.5 for i in ids})
        for _ in range(120):
            process_environment_step(m, {i: rng.random() < 0.4 for i in ids})
            for sv_id in list(m.dsvs) + list(m.csvs):
                sv = m.dsvs.get(sv_id) or m.csvs.get(sv_id)
                if sv.state is ACTIVE:
                    explained = sv.flag in (
                        Flag.UNCONDITIONAL,
                        Flag.POSSIBLY_CONDITIONAL,
                    ) or any(
                        m.csvs[c].state is ACTIVE
                        for c in m.conditioners_of(sv_id)
                        if c in m.csvs
                    )
                    assert explained, f"active SV {sv_id} unexplained"

    def test_monotone_source_shrinkage_and_flags(self):
        rng = random.Random(11)
        m = Model()
        ids = [m.add_bsv(f"B{i}") for i in range(5)]
        m.reset_context()
        process_environment_step(m, {i: rng.random() < 0.5 for i in ids})
        flag_rank = {
            Flag.UNCONDITIONAL: 0,
            Flag.CONDITIONAL: 1,
            Flag.POSSIBLY_CONDITIONAL: 2,
        }
        history: dict[int, tuple] = {}
        for _ in range(150):
            process_environment_step(m, {i: rng.random() < 0.4 for i in ids})
            for cid, c in m.csvs.items():
                if cid in history:
                    pos0, neg0, formed0, rank0 = history[cid]
                    assert c.pos_sources <= pos0
                    if formed0:
                        assert c.neg_sources <= neg0
                    assert flag_rank[c.flag] >= rank0
                history[cid] = (
                    set(c.pos_sources),
                    set(c.neg_sources),
                    c.neg_formed,
                    flag_rank[c.flag],
                )
