"""Evaluation metrics, report assembly, and result serialization.

The optimality gap is reported in two forms: the literal ratio
(l_m / l_s) * 100 and the excess percentage (l_m / l_s - 1) * 100. The
ratio form reads "model tour length as a percent of the reference"; the
excess form is signed, negative when the model beats the reference.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .autodiff import no_grad
from .decoder import rollout
from .errors import EmptyDataset, NonPositiveLength, TooLarge
from .geometry import Schedule
from .policy import PolicyParams
from .solvers import EXACT_MAX_AREAS, exact_schedule, nearest_neighbor, two_opt

REPORT_COLUMNS = ["map_id", "n", "model_cost", "ref_cost", "gap_ratio_pct", "excess_pct"]
REFERENCES = ("exact", "nn2opt")


def optimality_gap(l_m: float, l_s: float) -> float:
    """Model cost as a percent of the reference cost: (l_m / l_s) * 100.

    Raises:
        NonPositiveLength: unless both lengths are positive.
    """
    if l_m <= 0.0 or l_s <= 0.0:
        raise NonPositiveLength(f"lengths must be positive, got {l_m} and {l_s}")
    return (l_m / l_s) * 100.0


def excess_pct(l_m: float, l_s: float) -> float:
    """Signed companion of the gap ratio: (l_m / l_s - 1) * 100."""
    if l_m <= 0.0 or l_s <= 0.0:
        raise NonPositiveLength(f"lengths must be positive, got {l_m} and {l_s}")
    return (l_m / l_s - 1.0) * 100.0


def boxplot_stats(groups: Mapping[str, Sequence[float]]) -> dict[str, dict[str, float]]:
    """Five-number summary plus mean and population std per group.

    Quartiles use linear interpolation; [1,2,3,4,5] yields Q1=2, Q3=4.

    Raises:
        EmptyDataset: if any group has no records.
    """
    out: dict[str, dict[str, float]] = {}
    for name, values in groups.items():
        arr = np.asarray(list(values), dtype=np.float64)
        if arr.size == 0:
            raise EmptyDataset(f"group {name!r} has no records")
        out[name] = {
            "min": float(arr.min()),
            "q1": float(np.percentile(arr, 25)),
            "median": float(np.percentile(arr, 50)),
            "q3": float(np.percentile(arr, 75)),
            "max": float(arr.max()),
            "mean": float(arr.mean()),
            "std": float(arr.std()),
        }
    return out


@dataclass
class EvalRecord:
    map_id: int
    n: int
    model_cost: float
    ref_cost: float
    gap_ratio_pct: float
    excess_pct: float
    error: str | None = None


@dataclass
class EvalReport:
    """Per-instance records plus recomputable aggregate statistics."""

    records: list[EvalRecord]
    metadata: dict = field(default_factory=dict)

    @property
    def ok_records(self) -> list[EvalRecord]:
        return [r for r in self.records if r.error is None]

    @property
    def incomplete(self) -> bool:
        return any(r.error is not None for r in self.records)

    def aggregates(self) -> dict[str, dict[str, float]]:
        ok = self.ok_records
        if not ok:
            raise EmptyDataset("no successful records to aggregate")
        return boxplot_stats(
            {
                "model_cost": [r.model_cost for r in ok],
                "ref_cost": [r.ref_cost for r in ok],
                "gap_ratio_pct": [r.gap_ratio_pct for r in ok],
                "excess_pct": [r.excess_pct for r in ok],
            }
        )

    def to_json_dict(self) -> dict:
        return {
            "metadata": dict(self.metadata),
            "incomplete": self.incomplete,
            "count": len(self.records),
            "failures": [
                {"map_id": r.map_id, "error": r.error}
                for r in self.records
                if r.error is not None
            ],
            "aggregates": self.aggregates(),
        }

    def write_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(REPORT_COLUMNS)
            for r in self.ok_records:
                writer.writerow(
                    [
                        r.map_id,
                        r.n,
                        repr(r.model_cost),
                        repr(r.ref_cost),
                        repr(r.gap_ratio_pct),
                        repr(r.excess_pct),
                    ]
                )

    def write_json(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=2)
            fh.write("\n")


def load_report_csv(path: str) -> list[EvalRecord]:
    """Read back a report CSV; aggregates recompute from the result."""
    records = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            records.append(
                EvalRecord(
                    map_id=int(row["map_id"]),
                    n=int(row["n"]),
                    model_cost=float(row["model_cost"]),
                    ref_cost=float(row["ref_cost"]),
                    gap_ratio_pct=float(row["gap_ratio_pct"]),
                    excess_pct=float(row["excess_pct"]),
                )
            )
    return records


def _reference_cost(
    area_map, reference: str, lambda_intra: float, closed: bool
) -> float:
    if reference == "exact":
        _, cost = exact_schedule(area_map, lambda_intra=lambda_intra, closed=closed)
        return cost
    nn = nearest_neighbor(area_map, lambda_intra=lambda_intra, closed=closed)
    return two_opt(area_map, nn, lambda_intra=lambda_intra, closed=closed).total_cost


def evaluate(
    policy: PolicyParams | Callable[[object], Schedule],
    maps: Sequence,
    reference: str = "exact",
    lambda_intra: float = 0.0,
    closed: bool = True,
    metadata: Mapping | None = None,
) -> EvalReport:
    """Greedy-decode per map, solve the reference, and assemble a report.

    `policy` is either trained parameters (decoded greedily) or any
    callable mapping an area map to a Schedule, which lets tests inject
    doubles. Per-instance failures are recorded in the report rather than
    raised; the report flags itself incomplete.

    Raises:
        EmptyDataset: on an empty map sequence.
        TooLarge: upfront when reference="exact" meets a map with n > 12.
        ValueError: on an unknown reference name.
    """
    maps = list(maps)
    if not maps:
        raise EmptyDataset("evaluate needs at least one map")
    if reference not in REFERENCES:
        raise ValueError(f"reference must be one of {REFERENCES}, got {reference!r}")
    if reference == "exact":
        worst = max(m.n for m in maps)
        if worst > EXACT_MAX_AREAS:
            raise TooLarge(
                f"exact reference requires n <= {EXACT_MAX_AREAS}, dataset has n={worst}"
            )

    if isinstance(policy, PolicyParams):
        def model_schedule(m) -> Schedule:
            with no_grad():
                return rollout(
                    m, policy, mode="greedy", lambda_intra=lambda_intra, closed=closed
                ).schedule
    else:
        model_schedule = policy

    records: list[EvalRecord] = []
    for m in maps:
        try:
            l_m = model_schedule(m).total_cost
            l_s = _reference_cost(m, reference, lambda_intra, closed)
            records.append(
                EvalRecord(
                    map_id=m.map_id,
                    n=m.n,
                    model_cost=l_m,
                    ref_cost=l_s,
                    gap_ratio_pct=optimality_gap(l_m, l_s),
                    excess_pct=excess_pct(l_m, l_s),
                )
            )
        except Exception as exc:  # record, do not abort the sweep
            records.append(
                EvalRecord(
                    map_id=m.map_id,
                    n=m.n,
                    model_cost=float("nan"),
                    ref_cost=float("nan"),
                    gap_ratio_pct=float("nan"),
                    excess_pct=float("nan"),
                    error=f"{type(exc).__name__}: {exc}",
                )
            )

    meta = {
        "reference": reference,
        "lambda_intra": lambda_intra,
        "closed": closed,
        "n_values": sorted({m.n for m in maps}),
        "count": len(maps),
    }
    if metadata:
        meta.update(metadata)
    return EvalReport(records=records, metadata=meta)


def schedule_to_json_dict(
    schedule: Schedule,
    solver: str,
    params: Mapping | None = None,
    map_id: int | None = None,
    trace: Sequence | None = None,
) -> dict:
    """Uniform result document for both learned and classical solvers."""
    doc = {
        "solver": solver,
        "params": dict(params) if params else {},
        "map_id": map_id,
        "closed": schedule.closed,
        "total_cost": schedule.total_cost,
        "decisions": [
            {"area": d.area, "corner": d.corner, "pattern": d.pattern}
            for d in schedule.decisions
        ],
        "entry_points": [list(map(float, p)) for p in schedule.entry_points],
        "exit_points": [list(map(float, p)) for p in schedule.exit_points],
    }
    if trace is not None:
        doc["trace"] = [
            {
                "area_probs": [float(x) for x in t.area_probs.data],
                "corner_probs": [float(x) for x in t.corner_probs.data],
                "pattern_probs": [float(x) for x in t.pattern_probs.data],
            }
            for t in trace
        ]
    return doc
