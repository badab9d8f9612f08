"""Decision tool: reduce a Pareto archive to a few well-spread plans and report on them.

Selection keeps every per-objective minimizer, then adds plans by greedy
farthest-point selection in objective space min-max normalized over the
archive.  Ties are broken on the lexicographic objective tuple, then on
archive insertion order.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .case import PTV, CaseDefinition, case_to_dict
from .dosecore import dose
from .eudgd import write_fluence_csv
from .evalmo import (
    PlanEvaluation,
    dvh,
    dx_met,
    evaluate_plan,
    write_dvh_csv,
    write_evaluation_csv,
)
from .pareto import ArchiveEntry, ParetoArchive

MINIMIZER = "per-objective-minimizer"
SPREAD = "spread"
EXTRA_PLANS = 5


def default_k(n_objectives: int) -> int:
    return n_objectives + EXTRA_PLANS


@dataclass(frozen=True)
class ReducedFront:
    plans: tuple[ArchiveEntry, ...]
    tags: tuple[str, ...]

    def __len__(self):
        return len(self.plans)

    def objectives(self) -> np.ndarray:
        return np.array([p.objectives for p in self.plans])


def _order_key(entry: ArchiveEntry):
    return (tuple(entry.objectives.tolist()), entry.index)


def normalized_objectives(entries) -> np.ndarray:
    """Objectives scaled to [0, 1] per column over ``entries``; constant columns map to 0."""
    f = np.array([e.objectives for e in entries], dtype=float)
    lo, hi = f.min(axis=0), f.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    return (f - lo) / span


def per_objective_minimizers(entries) -> list[ArchiveEntry]:
    """One minimizer per objective, in objective order, without repeats."""
    out: list[ArchiveEntry] = []
    for i in range(len(entries[0].objectives)):
        best = min(
            entries,
            key=lambda e: (e.objectives[i], tuple(np.delete(e.objectives, i).tolist()), e.index),
        )
        if all(best is not o for o in out):
            out.append(best)
    return out


def reduce(archive: ParetoArchive | list, k: int | None = None) -> ReducedFront:
    """Pick at most ``k`` plans: all extreme points, then the farthest-spread rest.

    Plans with positive f0 stay eligible.

    Raises:
        ValueError: empty archive or ``k`` smaller than the number of objectives.
    """
    entries = list(archive)
    if not entries:
        raise ValueError("cannot reduce an empty archive")
    m = len(entries[0].objectives)
    k = default_k(m) if k is None else int(k)
    if k < m:
        raise ValueError(f"k={k} is below the number of objectives ({m}); every extreme point must fit")
    chosen = per_objective_minimizers(entries)
    tags = [MINIMIZER] * len(chosen)
    z = normalized_objectives(entries)
    pos = {id(e): i for i, e in enumerate(entries)}
    picked = {id(e) for e in chosen}
    nearest = np.full(len(entries), np.inf)
    for e in chosen:
        nearest = np.minimum(nearest, np.linalg.norm(z - z[pos[id(e)]], axis=1))
    while len(chosen) < k:
        rest = [e for e in entries if id(e) not in picked]
        if not rest:
            break
        far = max(nearest[pos[id(e)]] for e in rest)
        best = min((e for e in rest if nearest[pos[id(e)]] == far), key=_order_key)
        chosen.append(best)
        tags.append(SPREAD)
        picked.add(id(best))
        nearest = np.minimum(nearest, np.linalg.norm(z - z[pos[id(best)]], axis=1))
    return ReducedFront(tuple(chosen), tuple(tags))


# ---------------------------------------------------------------- comparison table


@dataclass(frozen=True)
class ComparisonRow:
    roi: str
    kind: str
    bound_type: str  # lb | lb_mean | ub_mean | ub | a Dx label such as D98%>=
    bound: float
    actuals: tuple[float, ...]
    flags: tuple[bool, ...]  # True where the bound is violated


_BOUND_STAT = {"lb": "dmin", "lb_mean": "dmean", "ub_mean": "dmean", "ub": "dmax"}


def _violated(bound_type: str, bound: float, value: float) -> bool:
    return value < bound if bound_type.startswith("lb") else value > bound


def _same_case(a: CaseDefinition, b: CaseDefinition) -> bool:
    return a is b or case_to_dict(a) == case_to_dict(b)


def compare(plans: list[PlanEvaluation]) -> list[ComparisonRow]:
    """Per-ROI bound rows with every plan's actual value and a violation flag.

    Raises:
        ValueError: no plans, or plans evaluated on different cases.
    """
    if not plans:
        raise ValueError("compare needs at least one plan")
    case = plans[0].case
    for p in plans[1:]:
        if not _same_case(case, p.case):
            raise ValueError("plans were evaluated on different cases")
    rows = []
    for rep in plans[0].structures:
        s = rep.structure
        for bt, bound in zip(("lb", "lb_mean", "ub_mean", "ub"), s.bounds.as_tuple()):
            if bound is None:
                continue
            vals = tuple(getattr(p.report(s.id).stats, _BOUND_STAT[bt]) for p in plans)
            rows.append(ComparisonRow(s.id, s.kind, bt, bound, vals, tuple(_violated(bt, bound, v) for v in vals)))
        for j, (metric, _) in enumerate(rep.dx):
            vals = tuple(p.report(s.id).dx[j][1] for p in plans)
            rows.append(ComparisonRow(s.id, s.kind, f"{metric.label}{metric.sense}", metric.bound, vals,
                                      tuple(not dx_met(metric, v) for v in vals)))
    return rows


def write_comparison_csv(rows: list[ComparisonRow], n_plans: int, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        head = ["roi", "kind", "bound_type", "bound"]
        for i in range(n_plans):
            head += [f"plan_{i}", f"plan_{i}_violated"]
        w.writerow(head)
        for r in rows:
            cells = [r.roi, r.kind, r.bound_type, f"{r.bound:.17g}"]
            for v, flag in zip(r.actuals, r.flags):
                cells += [f"{v:.17g}", "1" if flag else "0"]
            w.writerow(cells)


# ---------------------------------------------------------------- SVG rendering

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf", "#bcbd22")
_HEAT = ((0.0, (0, 0, 80)), (0.35, (0, 120, 220)), (0.6, (40, 200, 80)), (0.8, (250, 220, 0)), (1.0, (220, 20, 20)))


def _f(v: float) -> str:
    return f"{v:.2f}"


def _heat(t: float) -> str:
    t = min(max(t, 0.0), 1.0)
    for (t0, c0), (t1, c1) in zip(_HEAT, _HEAT[1:]):
        if t <= t1:
            u = (t - t0) / (t1 - t0)
            rgb = [round(a + u * (b - a)) for a, b in zip(c0, c1)]
            return "#%02x%02x%02x" % tuple(rgb)
    return "#%02x%02x%02x" % _HEAT[-1][1]


def _reported(ev: PlanEvaluation):
    return [r for r in ev.structures if r.structure.size > 0]


def dvh_svg(ev: PlanEvaluation, width: int = 640, height: int = 420) -> str:
    """Cumulative DVH chart; x spans 0 to 1.1 times the highest prescription."""
    case = ev.case
    rx = [s.prescribed for s in case.structures if s.kind == PTV and s.prescribed]
    x_max = 1.1 * max(rx) if rx else max(1.0, 1.1 * float(np.max(ev.doses)))
    ml, mr, mt, mb = 60, 160, 20, 50
    pw, ph = width - ml - mr, height - mt - mb

    def px(dose_gy):
        return ml + pw * min(dose_gy, x_max) / x_max

    def py(frac):
        return mt + ph * (1.0 - frac)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for i in range(11):
        gx = ml + pw * i / 10
        gy = mt + ph * i / 10
        out.append(f'<line x1="{_f(gx)}" y1="{mt}" x2="{_f(gx)}" y2="{mt + ph}" stroke="#dddddd"/>')
        out.append(f'<line x1="{ml}" y1="{_f(gy)}" x2="{ml + pw}" y2="{_f(gy)}" stroke="#dddddd"/>')
        out.append(f'<text x="{_f(gx)}" y="{mt + ph + 15}" font-size="10" text-anchor="middle">'
                   f'{x_max * i / 10:.1f}</text>')
        out.append(f'<text x="{ml - 5}" y="{_f(gy + 3)}" font-size="10" text-anchor="end">{100 - 10 * i}</text>')
    out.append(f'<text x="{ml + pw / 2:.2f}" y="{height - 10}" font-size="12" text-anchor="middle">Dose [Gy]</text>')
    out.append(f'<text x="15" y="{mt + ph / 2:.2f}" font-size="12" text-anchor="middle" '
               f'transform="rotate(-90 15 {mt + ph / 2:.2f})">Volume [%]</text>')
    for j, rep in enumerate(_reported(ev)):
        colour = _PALETTE[j % len(_PALETTE)]
        h = dvh(ev.doses, rep.structure.voxels)
        levels = np.unique(np.concatenate([[0.0], h.doses[h.doses < x_max], [x_max]]))
        frac = h.volume_at(levels)
        # step curve: volume drops right after each dose level
        pts = [(px(levels[0]), py(frac[0]))]
        for a, b, fa, fb in zip(levels[:-1], levels[1:], frac[:-1], frac[1:]):
            pts.append((px(b), py(fa)))
            pts.append((px(b), py(fb)))
        path = " ".join(f"{_f(x)},{_f(y)}" for x, y in pts)
        out.append(f'<polyline points="{path}" fill="none" stroke="{colour}" stroke-width="1.5"/>')
        ly = mt + 14 * j + 10
        out.append(f'<line x1="{ml + pw + 10}" y1="{ly}" x2="{ml + pw + 30}" y2="{ly}" stroke="{colour}" '
                   f'stroke-width="2"/>')
        out.append(f'<text x="{ml + pw + 35}" y="{ly + 4}" font-size="11">{rep.structure.id}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def slice_svg(ev: PlanEvaluation, z: int, cell: int = 10) -> str:
    """Axial dose heatmap of slice ``z`` with structure outlines.

    Raises:
        ValueError: ``z`` outside the grid.
    """
    nx, ny, nz = ev.case.grid.dims
    if not 0 <= z < nz:
        raise ValueError(f"slice z={z} outside the grid (0..{nz - 1})")
    vol = np.asarray(ev.doses).reshape(nx, ny, nz)[:, :, z]
    top = float(np.max(ev.doses)) or 1.0
    legend = 160
    w, h = nx * cell + legend, ny * cell
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">']
    for ix in range(nx):
        for iy in range(ny):
            out.append(f'<rect x="{ix * cell}" y="{iy * cell}" width="{cell}" height="{cell}" '
                       f'fill="{_heat(vol[ix, iy] / top)}"/>')
    for j, rep in enumerate(_reported(ev)):
        mask = np.zeros(nx * ny * nz, dtype=bool)
        mask[rep.structure.voxels] = True
        m = mask.reshape(nx, ny, nz)[:, :, z]
        colour = _PALETTE[j % len(_PALETTE)]
        segs = []
        for ix in range(nx):
            for iy in range(ny):
                if not m[ix, iy]:
                    continue
                x0, y0, x1, y1 = ix * cell, iy * cell, (ix + 1) * cell, (iy + 1) * cell
                if ix == 0 or not m[ix - 1, iy]:
                    segs.append(f"M{x0},{y0}V{y1}")
                if ix == nx - 1 or not m[ix + 1, iy]:
                    segs.append(f"M{x1},{y0}V{y1}")
                if iy == 0 or not m[ix, iy - 1]:
                    segs.append(f"M{x0},{y0}H{x1}")
                if iy == ny - 1 or not m[ix, iy + 1]:
                    segs.append(f"M{x0},{y1}H{x1}")
        if segs:
            out.append(f'<path d="{"".join(segs)}" fill="none" stroke="{colour}" stroke-width="1.5"/>')
        ly = 14 * j + 12
        out.append(f'<rect x="{nx * cell + 10}" y="{ly - 8}" width="10" height="10" fill="{colour}"/>')
        out.append(f'<text x="{nx * cell + 25}" y="{ly + 1}" font-size="11">{rep.structure.id}</text>')
    out.append(f'<text x="{nx * cell + 10}" y="{h - 10}" font-size="11">max {top:.2f} Gy</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------- report files


def render_reports(front: ReducedFront, case: CaseDefinition, D, out_dir, z: int = 0) -> list[Path]:
    """Write ``plan_<i>/`` report directories plus ``comparison.csv`` under ``out_dir``.

    Each archive payload must expose ``x_star``.  Returns the written paths.

    Raises:
        ValueError: empty front or invalid slice index.
    """
    if len(front) == 0:
        raise ValueError("nothing to report: the front is empty")
    nz = case.grid.dims[2]
    if not 0 <= z < nz:
        raise ValueError(f"slice z={z} outside the grid (0..{nz - 1})")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    evals = []
    for i, entry in enumerate(front.plans):
        pdir = out_dir / f"plan_{i}"
        pdir.mkdir(exist_ok=True)
        x = np.asarray(entry.payload.x_star, dtype=float)
        ev = evaluate_plan(dose(D, x), case)
        evals.append(ev)
        write_fluence_csv(x, case.beams, pdir / "fluence.csv")
        write_dvh_csv(ev, pdir / "dvh.csv")
        write_evaluation_csv(ev, pdir / "evaluation.csv")
        (pdir / "dvh.svg").write_text(dvh_svg(ev), encoding="utf-8")
        (pdir / f"slice_z{z}.svg").write_text(slice_svg(ev, z), encoding="utf-8")
        written += [pdir / n for n in ("fluence.csv", "dvh.csv", "evaluation.csv", "dvh.svg", f"slice_z{z}.svg")]
    write_comparison_csv(compare(evals), len(evals), out_dir / "comparison.csv")
    written.append(out_dir / "comparison.csv")
    return written

