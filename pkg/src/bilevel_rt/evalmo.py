"""Plan evaluation: dose statistics, constraint violations, objectives, DVHs and Dx% metrics."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .case import (
    NORMAL_TISSUE,
    OAR_PARALLEL,
    OAR_SERIAL,
    PTV,
    VIRTUAL_PTV,
    Bounds,
    CaseDefinition,
    DxMetric,
    Priority,
    Structure,
)

# (LB, LBmean, UBmean, UB) as percent of the prescription
PTV_BOUND_PERCENT = (90, 98, 102, 110)
PTV_DX_RULES = ((98.0, 95, ">="), (2.0, 107, "<="))


@dataclass(frozen=True)
class DoseStats:
    dmin: float
    dmean: float
    dmax: float


@dataclass(frozen=True)
class Violations:
    c_min: float
    c_mean_min: float
    c_mean_max: float
    c_max: float

    @property
    def total(self) -> float:
        return self.c_min + self.c_mean_min + self.c_mean_max + self.c_max

    def as_tuple(self):
        return (self.c_min, self.c_mean_min, self.c_mean_max, self.c_max)


def derive_ptv_bounds(prescribed: float) -> Bounds:
    """(LB, LBmean, UBmean, UB) = (0.90, 0.98, 1.02, 1.10) x prescription."""
    if not prescribed > 0:
        raise ValueError(f"prescribed dose must be positive, got {prescribed}")
    return Bounds(*(prescribed * p / 100 for p in PTV_BOUND_PERCENT))


def derive_ptv_dx(prescribed: float) -> tuple[DxMetric, ...]:
    """D98% >= 95% and D2% <= 107% of the prescription."""
    return tuple(DxMetric(x, prescribed * p / 100, sense) for x, p, sense in PTV_DX_RULES)


def _masked(d, voxels) -> np.ndarray:
    voxels = np.asarray(voxels)
    if voxels.size == 0:
        raise ValueError("structure mask is empty")
    return np.asarray(d, dtype=float)[voxels]


def dose_stats(d, voxels) -> DoseStats:
    v = _masked(d, voxels)
    return DoseStats(float(v.min()), float(v.mean()), float(v.max()))


def violations(stats: DoseStats, bounds: Bounds) -> Violations:
    """Amount by which each defined bound is exceeded; zero when satisfied or undefined."""
    lb, lb_mean, ub_mean, ub = bounds.as_tuple()
    return Violations(
        lb - stats.dmin if lb is not None and lb > stats.dmin else 0.0,
        lb_mean - stats.dmean if lb_mean is not None and lb_mean > stats.dmean else 0.0,
        stats.dmean - ub_mean if ub_mean is not None and ub_mean < stats.dmean else 0.0,
        stats.dmax - ub if ub is not None and ub < stats.dmax else 0.0,
    )


def constrained_structures(case: CaseDefinition) -> list[Structure]:
    # virtual PTVs only shape the gEUD objective; empty masks carry no dose
    return [s for s in case.structures if s.kind != VIRTUAL_PTV and s.size > 0]


def f0(d, case: CaseDefinition) -> float:
    """Total constraint violation over every (non-virtual) structure, in Gy."""
    total = 0.0
    for s in constrained_structures(case):
        if s.bounds.is_empty():
            continue
        total += violations(dose_stats(d, s.voxels), s.bounds).total
    return total


def default_mode(case: CaseDefinition, priority: Priority) -> str:
    kinds = {case.structure(sid).kind for sid in priority.structures}
    return "max" if kinds == {OAR_SERIAL} else "mean"


def f_p(d, case: CaseDefinition, priority: Priority | str, mode: str | None = None) -> float:
    """Priority objective: mean or max dose of the priority structures.

    Raises:
        KeyError: ``priority`` is not one of the case priorities.
    """
    if isinstance(priority, str):
        match = [p for p in case.priorities if p.id == priority]
        if not match:
            raise KeyError(f"{priority!r} is not a priority of case {case.name!r}")
        priority = match[0]
    mode = mode or priority.mode
    masks = [case.structure(sid).voxels for sid in priority.structures]
    d = np.asarray(d, dtype=float)
    if mode == "max":
        return float(max(d[m].max() for m in masks))
    if priority.aggregate == "sum_of_means":
        return float(sum(d[m].mean() for m in masks))
    union = np.unique(np.concatenate(masks))
    return float(d[union].mean())


def objectives(d, case: CaseDefinition) -> np.ndarray:
    """Objective tuple (f0, f_1, ..., f_|P|), all minimized."""
    return np.array([f0(d, case)] + [f_p(d, case, p) for p in case.priorities])


# ---------------------------------------------------------------- DVH / Dx%


@dataclass(frozen=True)
class Dvh:
    """Cumulative DVH of one structure, backed by the sorted voxel doses."""

    structure: str
    doses: np.ndarray  # ascending

    def volume_at(self, level) -> np.ndarray:
        """Fraction of voxels receiving at least ``level`` Gy."""
        level = np.asarray(level, dtype=float)
        n = self.doses.size
        below = np.searchsorted(self.doses, level, side="left")
        return (n - below) / n

    def curve(self, levels=None) -> tuple[np.ndarray, np.ndarray]:
        if levels is None:
            levels = np.concatenate([[0.0], np.unique(self.doses)])
        levels = np.asarray(levels, dtype=float)
        return levels, self.volume_at(levels)


def dvh(d, voxels, structure: str = "") -> Dvh:
    return Dvh(structure, np.sort(_masked(d, voxels)))


def dx_percent(doses, x_percent: float) -> float:
    """Dx%: the ceil(x/100 * N)-th largest dose (no interpolation)."""
    if not 0 < x_percent <= 100:
        raise ValueError(f"x must lie in (0, 100], got {x_percent}")
    v = doses.doses if isinstance(doses, Dvh) else np.sort(np.asarray(doses, dtype=float))
    if v.size == 0:
        raise ValueError("cannot take Dx% of an empty structure")
    k = max(1, math.ceil(round(x_percent * v.size / 100.0, 9)))
    return float(v[v.size - k])


def dx_met(metric: DxMetric, value: float) -> bool:
    return value >= metric.bound if metric.sense == ">=" else value <= metric.bound


# ---------------------------------------------------------------- plan evaluation


@dataclass(frozen=True, eq=False)
class StructureReport:
    structure: Structure
    stats: DoseStats
    violations: Violations
    dx: tuple[tuple[DxMetric, float], ...]

    @property
    def actual(self) -> float:
        """Headline dose: mean for targets and parallel organs, max otherwise (table layout)."""
        if self.structure.kind in (PTV, OAR_PARALLEL):
            return self.stats.dmean
        return self.stats.dmax


@dataclass(frozen=True, eq=False)
class PlanEvaluation:
    case: CaseDefinition
    doses: np.ndarray
    objectives: np.ndarray
    structures: tuple[StructureReport, ...]

    def report(self, sid: str) -> StructureReport:
        for r in self.structures:
            if r.structure.id == sid:
                return r
        raise KeyError(sid)


def evaluate_plan(d, case: CaseDefinition) -> PlanEvaluation:
    d = np.asarray(d, dtype=float)
    reports = []
    for s in constrained_structures(case):
        st = dose_stats(d, s.voxels)
        dv = dvh(d, s.voxels, s.id)
        reports.append(
            StructureReport(s, st, violations(st, s.bounds), tuple((m, dx_percent(dv, m.percent)) for m in s.dx))
        )
    return PlanEvaluation(case, d, objectives(d, case), tuple(reports))


def _fmt(v) -> str:
    return "" if v is None else f"{v:.17g}"


EVALUATION_HEADER = ["roi", "kind", "lb", "lb_mean", "ub_mean", "ub", "dmin", "dmean", "dmax", "actual",
                     "dx_metric", "dx_bound", "dx_actual"]


def write_evaluation_csv(ev: PlanEvaluation, path) -> None:
    """One row per structure (bounds and actual dose) followed by one row per Dx metric."""
    order = {NORMAL_TISSUE: 0, OAR_PARALLEL: 1, OAR_SERIAL: 1, PTV: 2}
    rows = sorted(ev.structures, key=lambda r: order.get(r.structure.kind, 3))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EVALUATION_HEADER)
        for r in rows:
            b = r.structure.bounds
            w.writerow([r.structure.id, r.structure.kind, *(_fmt(v) for v in b.as_tuple()),
                        _fmt(r.stats.dmin), _fmt(r.stats.dmean), _fmt(r.stats.dmax), _fmt(r.actual), "", "", ""])
            for m, val in r.dx:
                w.writerow([r.structure.id, r.structure.kind, "", "", "", "", "", "", "", "",
                            f"{m.label}{m.sense}", _fmt(m.bound), _fmt(val)])


def write_dvh_csv(ev: PlanEvaluation, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["structure", "dose", "fraction"])
        for r in ev.structures:
            levels, frac = dvh(ev.doses, r.structure.voxels).curve()
            for lv, fr in zip(levels.tolist(), frac.tolist()):
                w.writerow([r.structure.id, _fmt(lv), _fmt(fr)])
