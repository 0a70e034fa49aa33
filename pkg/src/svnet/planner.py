"""Goal-directed planning over a learned state-variable model.

The planner preprocesses the model into a grouped view (bundling base
variables that always act together into group SVs), then expands a
dependency network backward from each goal: an *action network* (AN) whose
nodes are (variable, effect) pairs and whose edges run from requirements
and alternative causes toward the goal. Expansion stops at nodes satisfied
by the current environment state (roots). The network is exhaustive - every
pathway is included - and carries no event-timing reasoning; both are
deliberate simplicity trade-offs.

Node encoding (hashable tuples, shared with encapsulation and exports):
("bsv", id, effect) / ("gsv", id, effect) / ("csv", id), with effect one of
"A" (activation event), "D" (deactivation event), "1" (active), "0"
(nonactive). Effects are irrelevant for conditioner nodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional

import networkx as nx

from .core import ACTIVE, Flag, Model, SvState

__all__ = [
    "EFFECTS",
    "PRECONDITION",
    "GroupSv",
    "GroupedView",
    "build_group_svs",
    "plan",
    "generate_upstream_an",
    "select_action",
    "node_label",
]

EFFECTS = ("A", "D", "1", "0")
# To occur, an effect first needs its precondition: activation needs the
# variable nonactive, being active needs an activation, and so on.
PRECONDITION = {"A": "0", "D": "1", "1": "A", "0": "D"}


@dataclass
class GroupSv:
    id: int
    members: tuple[int, ...]


@dataclass
class GroupedView:
    """Planner-facing rewrite of a model: group SVs plus per-conditioner
    source/target item lists in AN node encoding. Read-only."""

    revision: int
    gsvs: dict[int, GroupSv] = field(default_factory=dict)
    membership: dict[int, set[int]] = field(default_factory=dict)  # bsv -> gsv ids
    pos_items: dict[int, list[tuple]] = field(default_factory=dict)
    neg_items: dict[int, list[tuple]] = field(default_factory=dict)
    target_items: dict[int, list[tuple]] = field(default_factory=dict)
    event_conditioners: dict[tuple, set[int]] = field(default_factory=dict)


def _group_key(members: Iterable[int]) -> tuple[int, ...]:
    return tuple(sorted(members))


def build_group_svs(model: Model) -> GroupedView:
    """Group base variables that act collectively: a conditioner's base
    positive sources, its base negative sources, and same-kind event sets
    it predicts. Identical groups are shared; singletons stay ungrouped."""
    view = GroupedView(revision=model.revision)
    by_members: dict[tuple[int, ...], int] = {}

    def gsv_for(members: Iterable[int]) -> int:
        key = _group_key(members)
        gid = by_members.get(key)
        if gid is None:
            gid = len(by_members)
            by_members[key] = gid
            view.gsvs[gid] = GroupSv(id=gid, members=key)
            for b in key:
                view.membership.setdefault(b, set()).add(gid)
        return gid

    for cid in sorted(model.csvs):
        csv = model.csvs[cid]
        pos_bsvs = sorted(s for s in csv.pos_sources if s in model.bsvs)
        pos_dsvs = sorted(s for s in csv.pos_sources if s in model.dsvs)
        items: list[tuple] = []
        if len(pos_bsvs) >= 2:
            items.append(("gsv", gsv_for(pos_bsvs), "1"))
        else:
            items.extend(("bsv", b, "1") for b in pos_bsvs)
        for d in pos_dsvs:
            dsv = model.dsvs[d]
            items.append(("bsv", dsv.owner, dsv.kind))
        view.pos_items[cid] = items

        # Negative sources become nonactive-state requirements. Detector
        # negatives are left out: requiring an event *not* to happen is
        # timing reasoning, which this planner deliberately lacks.
        neg_bsvs = sorted(s for s in csv.neg_sources if s in model.bsvs)
        if len(neg_bsvs) >= 2:
            view.neg_items[cid] = [("gsv", gsv_for(neg_bsvs), "0")]
        else:
            view.neg_items[cid] = [("bsv", b, "0") for b in neg_bsvs]

        tgt_items: list[tuple] = []
        by_kind: dict[str, list[int]] = {"A": [], "D": []}
        for t in sorted(csv.targets):
            if t in model.dsvs:
                dsv = model.dsvs[t]
                by_kind[dsv.kind].append(dsv.owner)
            else:
                tgt_items.append(("csv", t))
        for kind in ("A", "D"):
            owners = by_kind[kind]
            if len(owners) >= 2:
                tgt_items.append(("gsv", gsv_for(owners), kind))
            else:
                tgt_items.extend(("bsv", b, kind) for b in owners)
        view.target_items[cid] = tgt_items
        for item in tgt_items:
            if item[0] != "csv":
                view.event_conditioners.setdefault(item, set()).add(cid)
    return view


_VIEW_CACHE: dict[int, tuple[int, GroupedView]] = {}


def grouped_view(model: Model) -> GroupedView:
    """Cache keyed on the model's revision counter."""
    cached = _VIEW_CACHE.get(id(model))
    if cached is not None and cached[0] == model.revision:
        return cached[1]
    view = build_group_svs(model)
    _VIEW_CACHE[id(model)] = (model.revision, view)
    return view


def _is_action(model: Model, bsv_id: int) -> bool:
    bsv = model.bsvs.get(bsv_id)
    return bsv is not None and bsv.is_action


def node_satisfied(
    model: Model, view: GroupedView, node: tuple, current: Mapping[int, SvState]
) -> bool:
    kind = node[0]
    if kind == "bsv":
        _, b, eff = node
        bsv = model.bsvs[b]
        if eff == "1":
            return current.get(b) is ACTIVE
        if eff == "0":
            return current.get(b) is not ACTIVE
        dsv_id = bsv.a_dsv if eff == "A" else bsv.d_dsv
        return dsv_id is not None and current.get(dsv_id) is ACTIVE
    if kind == "gsv":
        _, g, eff = node
        return all(
            node_satisfied(model, view, ("bsv", b, eff), current)
            for b in view.gsvs[g].members
        )
    cid = node[1]
    csv = model.csvs[cid]
    return all(current.get(s) is ACTIVE for s in csv.pos_sources) and not any(
        current.get(s) is ACTIVE for s in csv.neg_sources
    )


def _pathways(model: Model, view: GroupedView, node: tuple) -> list[tuple[tuple, str]]:
    """Predecessors to expand for a node, with edge roles. Conditioner and
    constituency edges are alternative causes; precondition, constituent,
    and source edges are conjunctive requirements."""
    kind = node[0]
    out: list[tuple[tuple, str]] = []
    if kind == "bsv":
        _, b, eff = node
        out.append((("bsv", b, PRECONDITION[eff]), "precondition"))
        for g in sorted(view.membership.get(b, ())):
            out.append((("gsv", g, eff), "constituency"))
        if eff in ("A", "D"):
            for cid in sorted(view.event_conditioners.get(node, ())):
                out.append((("csv", cid), "conditioner"))
    elif kind == "gsv":
        _, g, eff = node
        out.append((("gsv", g, PRECONDITION[eff]), "precondition"))
        for b in view.gsvs[g].members:
            out.append((("bsv", b, eff), "constituent"))
        if eff in ("A", "D"):
            for cid in sorted(view.event_conditioners.get(node, ())):
                out.append((("csv", cid), "conditioner"))
    else:
        cid = node[1]
        for item in view.pos_items[cid]:
            out.append((item, "source"))
        for item in view.neg_items.get(cid, ()):
            out.append((item, "source"))
        for up in sorted(model.conditioners_of(cid)):
            if up in model.csvs:
                out.append((("csv", up), "conditioner"))
    return out


def generate_upstream_an(
    model: Model,
    view: GroupedView,
    start: tuple,
    current: Mapping[int, SvState],
    net: nx.DiGraph,
) -> None:
    """Expand the upstream network for one node into ``net`` (shared across
    goals; visited nodes are not reopened)."""
    if start in net:
        return
    stack = [start]
    while stack:
        node = stack.pop()
        if node in net and net.nodes[node].get("expanded"):
            continue
        if node not in net:
            net.add_node(node)
        net.nodes[node]["expanded"] = True
        if node_satisfied(model, view, node, current):
            net.nodes[node]["satisfied"] = True
            continue  # a root: no expansion behind satisfied nodes
        if node[0] == "bsv" and _is_action(model, node[1]):
            net.nodes[node]["controllable"] = True
            continue  # agent-controlled leaf
        for pred, role in _pathways(model, view, node):
            fresh = pred not in net
            if fresh:
                net.add_node(pred)
            net.add_edge(pred, node, role=role)
            if fresh or not net.nodes[pred].get("expanded"):
                stack.append(pred)


def _mark_dead(net: nx.DiGraph) -> None:
    """Least-fixpoint aliveness: a node is alive when satisfied, agent
    controlled, or justified by alive predecessors - any alive conditioner
    or constituency for events, the precondition event or a constituency
    for states, all constituents for group events, all sources for
    conditioners. Everything not provably alive is dead."""
    alive: set[tuple] = {
        n
        for n, d in net.nodes(data=True)
        if d.get("satisfied") or d.get("controllable")
    }
    changed = True
    while changed:
        changed = False
        for node in net.nodes:
            if node in alive:
                continue
            preds = [(p, net.edges[p, node]["role"]) for p in net.predecessors(node)]
            kind = node[0]
            ok = False
            if kind == "csv":
                sources = [p for p, r in preds if r == "source"]
                ok = bool(sources) and all(p in alive for p in sources)
            else:
                eff = node[2]
                conds = [p for p, r in preds if r in ("conditioner", "constituency")]
                ok = any(p in alive for p in conds)
                if not ok and eff in ("1", "0"):
                    ok = any(p in alive for p, r in preds if r == "precondition")
                if not ok and kind == "gsv" and eff in ("A", "D"):
                    cons = [p for p, r in preds if r == "constituent"]
                    ok = bool(cons) and all(p in alive for p in cons)
            if ok:
                alive.add(node)
                changed = True
    for node in net.nodes:
        net.nodes[node]["dead"] = node not in alive


def plan(
    model: Model,
    current: Mapping[int, SvState],
    goals: list[tuple],
    view: Optional[GroupedView] = None,
) -> nx.DiGraph:
    """Union of upstream networks for all goals, with roots and dead
    pathways marked. Deterministic for fixed (model, states, goals)."""
    if not goals:
        raise ValueError("goals must be nonempty")
    if view is None:
        view = grouped_view(model)
    net = nx.DiGraph()
    for goal in goals:
        generate_upstream_an(model, view, goal, current, net)
    _mark_dead(net)
    net.graph["goals"] = list(goals)
    return net


def goal_reachable(net: nx.DiGraph) -> bool:
    return all(not net.nodes[g].get("dead") for g in net.graph["goals"])


def _csv_ready(
    model: Model,
    cid: int,
    current: Mapping[int, SvState],
    chosen_action: int,
) -> bool:
    csv = model.csvs[cid]
    for s in csv.pos_sources:
        if s == chosen_action:
            continue
        if _is_action(model, s):
            return False
        if current.get(s) is not ACTIVE:
            return False
    for s in csv.neg_sources:
        if s == chosen_action:
            return False
        if current.get(s) is ACTIVE:
            return False
    return True


def _expected_active(
    model: Model,
    cid: int,
    current: Mapping[int, SvState],
    chosen_action: int,
    memo: dict[int, bool],
) -> bool:
    """Whether firing the sources now is actually expected to activate the
    conditioner: unconditional and possibly-conditional ones fire on their
    sources; a conditional one additionally needs some upstream conditioner
    that is itself expected to fire this step (chains fire as one unit)."""
    if cid in memo:
        return memo[cid]
    memo[cid] = False  # cycle guard; conditioning graph is acyclic anyway
    csv = model.csvs[cid]
    ok = _csv_ready(model, cid, current, chosen_action)
    if ok and csv.flag is Flag.CONDITIONAL:
        ok = any(
            up in model.csvs
            and _expected_active(model, up, current, chosen_action, memo)
            for up in sorted(model.conditioners_of(cid))
        )
    memo[cid] = ok
    return ok


def select_action(
    model: Model,
    net: nx.DiGraph,
    current: Mapping[int, SvState],
    rng,
) -> Optional[int]:
    """Pick uniformly among actions that would immediately fire a
    conditioner in the network whose remaining sources - and the sources of
    conditioners downstream of it toward the goal - are all actualized by
    the current states. None when no such action exists (caller falls back
    to a random action)."""
    candidates: set[int] = set()
    for node in net.nodes:
        if node[0] != "csv":
            continue
        cid = node[1]
        csv = model.csvs.get(cid)
        if csv is None:
            continue
        actions = sorted(
            s for s in csv.pos_sources if _is_action(model, s)
        )
        if len(actions) != 1:
            continue
        action = actions[0]
        if not _expected_active(model, cid, current, action, {}):
            continue
        # A conditioning chain fires as one unit: conditioner targets that
        # are themselves conditioners must be satisfiable now as well.
        # Event targets end the chain (they impose no sources of their own).
        ok = True
        seen = {node}
        queue = [node]
        while queue and ok:
            cur_node = queue.pop()
            for succ in net.successors(cur_node):
                if succ in seen or succ[0] != "csv":
                    continue
                if net.edges[cur_node, succ].get("role") != "conditioner":
                    continue
                seen.add(succ)
                if succ[1] in model.csvs and not _csv_ready(
                    model, succ[1], current, action
                ):
                    ok = False
                    break
                queue.append(succ)
        if ok:
            candidates.add(action)
    if not candidates:
        return None
    ordered = sorted(candidates)
    return ordered[int(rng.integers(len(ordered)))]


def node_label(model: Model, node: tuple) -> str:
    kind = node[0]
    if kind == "bsv":
        return f"{model.labels.get(node[1], node[1])}-{node[2]}"
    if kind == "gsv":
        return f"Group{node[1]}-{node[2]}"
    return f"C{node[1]}"
