"""Two-cell finite-state-machine test environment.

Each cell holds one of seven states or is empty. Subtypes (RS, SGS, NEG)
light up different portions of the transition table; Complete is their
union. The goal is reached when cell 1 shows G, after which the harness
resets the environment. A *random* variant adds two base variables that
toggle at random every step, for exercising significance filtering.

The transition table ships as a data file (see data/fsm_table.txt) so it
can be revised without touching code.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import InputError

__all__ = [
    "CELL_STATES",
    "N_ACTIONS",
    "EnvConfig",
    "EnvState",
    "FsmEnv",
    "Observation",
    "parse_fsm_table",
    "load_default_table",
]

CELL_STATES = ("DO", "DC", "W", "G", "SG1", "SG2", "X")
EMPTY = "-"
N_ACTIONS = 20
SUBTYPES = ("RS", "SGS", "NEG", "Complete")
START_CELLS = ("DC", "W")


@dataclass(frozen=True)
class EnvConfig:
    subtype: str = "Complete"
    random_variant: bool = False
    seed: int = 0
    table_path: Optional[str] = None

    def __post_init__(self):
        if self.subtype not in SUBTYPES:
            raise InputError(f"unknown subtype {self.subtype!r}")


@dataclass
class EnvState:
    cells: tuple[str, str]
    random_bits: tuple[bool, bool] = (False, False)


@dataclass
class Observation:
    """Base-variable assignment for one step, keyed by label, plus the
    action (one of 0..N_ACTIONS-1) taken on the previous step."""

    bsv_values: dict[str, bool]
    previous_action: Optional[int] = None


Outcome = list[tuple[tuple[str, str], float]]


def parse_fsm_table(text: str) -> dict[str, dict[tuple[str, str, int], Outcome]]:
    tables: dict[str, dict[tuple[str, str, int], Outcome]] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            head, rhs = line.split("->")
            subtype, cells, action = head.split()
            c1, c2 = cells.split(",")
            if not action.startswith("a"):
                raise ValueError("bad action")
            act = int(action[1:])
            outcomes: Outcome = []
            for part in rhs.split():
                if "@" in part:
                    cell_part, prob = part.split("@")
                    p = float(prob)
                else:
                    cell_part, p = part, None
                o1, o2 = cell_part.split(",")
                _check_cell(o1)
                _check_cell(o2)
                outcomes.append(((o1, o2), p))
        except (ValueError, IndexError) as exc:
            raise InputError(f"bad FSM table line {lineno}: {raw!r}") from exc
        _check_cell(c1)
        _check_cell(c2)
        if not 0 <= act < N_ACTIONS:
            raise InputError(f"action out of range on line {lineno}")
        n_free = sum(1 for _, p in outcomes if p is None)
        if n_free:
            rest = 1.0 - sum(p for _, p in outcomes if p is not None)
            outcomes = [
                (c, p if p is not None else rest / n_free) for c, p in outcomes
            ]
        total = sum(p for _, p in outcomes)
        if abs(total - 1.0) > 1e-9:
            raise InputError(f"probabilities sum to {total} on line {lineno}")
        tables.setdefault(subtype, {})[(c1, c2, act)] = [
            (c, p) for c, p in outcomes
        ]
    return tables


def _check_cell(value: str) -> None:
    if value != EMPTY and value not in CELL_STATES:
        raise InputError(f"unknown cell state {value!r}")


def load_default_table() -> dict[str, dict[tuple[str, str, int], Outcome]]:
    text = (
        importlib.resources.files("svnet.data")
        .joinpath("fsm_table.txt")
        .read_text()
    )
    return parse_fsm_table(text)


class FsmEnv:
    """One environment instance per trial; deterministic given the seed."""

    def __init__(self, config: EnvConfig):
        self.config = config
        if config.table_path:
            with open(config.table_path) as fh:
                tables = parse_fsm_table(fh.read())
        else:
            tables = load_default_table()
        merged: dict[tuple[str, str, int], Outcome] = dict(
            tables.get("ALL", {})
        )
        parts = (
            ("RS", "SGS", "NEG")
            if config.subtype == "Complete"
            else (config.subtype,)
        )
        for part in parts:
            for key, outcome in tables.get(part, {}).items():
                if key in merged:
                    raise InputError(f"conflicting transition for {key}")
                merged[key] = outcome
        self.table = merged
        self.rng = np.random.default_rng(config.seed)
        self.state = EnvState(cells=START_CELLS)

    # -- interface ----------------------------------------------------------

    def bsv_labels(self) -> list[str]:
        labels = [f"{cell}{s}" for cell in (1, 2) for s in CELL_STATES]
        if self.config.random_variant:
            labels += ["RND1", "RND2"]
        return labels

    def action_labels(self) -> list[str]:
        return [f"a{i}" for i in range(N_ACTIONS)]

    def reset(self) -> EnvState:
        self.state = EnvState(cells=START_CELLS)
        if self.config.random_variant:
            self.state.random_bits = (False, False)
        return self.state

    def step(self, action: int) -> EnvState:
        if not 0 <= action < N_ACTIONS:
            raise InputError(f"invalid action {action}")
        c1, c2 = self.state.cells
        outcome = self.table.get((c1, c2, action))
        if outcome is None:
            cells = (c1, c2)
        elif len(outcome) == 1:
            cells = outcome[0][0]
        else:
            probs = [p for _, p in outcome]
            idx = int(self.rng.choice(len(outcome), p=probs))
            cells = outcome[idx][0]
        bits = self.state.random_bits
        if self.config.random_variant:
            bits = (bool(self.rng.random() < 0.5), bool(self.rng.random() < 0.5))
        self.state = EnvState(cells=cells, random_bits=bits)
        return self.state

    def observe(self, previous_action: Optional[int] = None) -> Observation:
        values: dict[str, bool] = {}
        for cell_no, cell_value in zip((1, 2), self.state.cells):
            for s in CELL_STATES:
                values[f"{cell_no}{s}"] = cell_value == s
        if self.config.random_variant:
            values["RND1"], values["RND2"] = self.state.random_bits
        return Observation(bsv_values=values, previous_action=previous_action)

    def goal_reached(self) -> bool:
        return self.state.cells[0] == "G"
