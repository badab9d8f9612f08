"""Lower-level optimizer: projected gradient ascent of log F over the fluence box."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.ndimage import correlate

from .case import BeamLayout, CaseDefinition
from .dosecore import GeudObjective, NumericalAbort, ParamVector, column_norm, dose

CLINICAL_STEP_SIZE = 2e-7
CLINICAL_STEPS = 20000
UNIFORM_KERNEL = np.full((3, 3), 1.0 / 9.0)


@dataclass(frozen=True)
class GdConfig:
    """Gradient-ascent settings.

    ``step_size=None`` calibrates the step as ``step_scale / ||D||_1``.
    ``x0`` is ``"half"`` (uniform x_max / 2), ``"zero"`` or ``"random"``
    (uniform in [0, x_max] drawn with ``seed``).
    """

    steps: int = 500
    step_size: float | None = None
    step_scale: float = 5.0
    x_max: float = 0.3
    smoothing: bool = True
    kernel: tuple[tuple[float, ...], ...] = tuple(map(tuple, UNIFORM_KERNEL.tolist()))
    x0: str = "half"
    seed: int = 0
    record: bool = False

    def __post_init__(self):
        if int(self.steps) < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.step_size is not None and self.step_size < 0:
            raise ValueError(f"step size must be >= 0, got {self.step_size}")
        if not self.step_scale > 0:
            raise ValueError(f"step scale must be positive, got {self.step_scale}")
        if not self.x_max > 0:
            raise ValueError(f"x_max must be positive, got {self.x_max}")
        k = np.asarray(self.kernel, dtype=float)
        if k.shape != (3, 3) or np.any(k < 0) or abs(k.sum() - 1.0) > 1e-12:
            raise ValueError("smoothing kernel must be 3x3, nonnegative and sum to 1")
        if self.x0 not in ("half", "zero", "random"):
            raise ValueError(f"unknown x0 policy {self.x0!r}")

    def resolved_step(self, D) -> float:
        if self.step_size is not None:
            return float(self.step_size)
        return self.step_scale / column_norm(D)

    def as_dict(self) -> dict:
        return {
            "steps": self.steps,
            "step_size": self.step_size,
            "step_scale": self.step_scale,
            "x_max": self.x_max,
            "smoothing": self.smoothing,
            "kernel": [list(r) for r in self.kernel],
            "x0": self.x0,
            "seed": self.seed,
        }


@dataclass
class PlanResult:
    x_star: np.ndarray
    final_logF: float
    step_size: float
    trajectory: np.ndarray | None = field(default=None, repr=False)


def smooth_beam(grid, kernel=UNIFORM_KERNEL) -> np.ndarray:
    """3x3 smoothing with edge renormalization.

    Kernel weights falling outside the grid are dropped and the remainder
    rescaled to sum to one, so a constant grid is preserved exactly.
    """
    g = np.asarray(grid, dtype=float)
    k = np.asarray(kernel, dtype=float)
    num = correlate(g, k, mode="constant", cval=0.0)
    den = correlate(np.ones_like(g), k, mode="constant", cval=0.0)
    return num / den


def smooth_fluence(x: np.ndarray, layout: BeamLayout, kernel=UNIFORM_KERNEL) -> np.ndarray:
    out = np.empty_like(x)
    off = layout.offsets()
    for i, b in enumerate(layout.beams):
        seg = x[off[i]:off[i + 1]].reshape(b.grid)
        out[off[i]:off[i + 1]] = smooth_beam(seg, kernel).ravel()
    return out


def smoothing_operator(layout: BeamLayout, kernel=UNIFORM_KERNEL) -> sp.csr_array:
    """Sparse matrix applying :func:`smooth_beam` to every beam of a flat fluence vector."""
    n = layout.n_beamlets
    cols = []
    eye = np.eye(n)
    for j in range(n):
        cols.append(smooth_fluence(eye[j], layout, kernel))
    S = sp.csr_array(np.array(cols).T)
    S.eliminate_zeros()
    return S


def initial_fluence(n: int, cfg: GdConfig) -> np.ndarray:
    if cfg.x0 == "half":
        return np.full(n, cfg.x_max / 2.0)
    if cfg.x0 == "zero":
        return np.zeros(n)
    return np.random.default_rng(cfg.seed).uniform(0.0, cfg.x_max, size=n)


def optimize(D, case: CaseDefinition, params: ParamVector, cfg: GdConfig, x0=None) -> PlanResult:
    """Maximize log F by projected gradient ascent for a fixed number of steps.

    Each iteration: gradient step, clip to [0, x_max], optional per-beam
    smoothing, clip again.

    Raises:
        NumericalAbort: a structure produced a non-finite value; carries the
            iteration index and the structure id.
    """
    n = D.shape[1]
    if n != case.beams.n_beamlets:
        raise ValueError(f"deposition matrix has {n} columns, beam layout has {case.beams.n_beamlets} beamlets")
    obj = GeudObjective(case, params)
    step = cfg.resolved_step(D)
    kernel = np.asarray(cfg.kernel, dtype=float)
    x = initial_fluence(n, cfg) if x0 is None else np.clip(np.asarray(x0, dtype=float), 0.0, cfg.x_max)
    DT = D.T.tocsr()
    S = smoothing_operator(case.beams, kernel) if cfg.smoothing else None
    trajectory = np.empty(cfg.steps + 1) if cfg.record else None
    for it in range(cfg.steps):
        try:
            value, gd = obj.value_and_dose_grad(dose(D, x))
        except NumericalAbort as exc:
            raise NumericalAbort(exc.structure, it, "objective evaluation failed") from None
        if trajectory is not None:
            trajectory[it] = value
        g = DT @ gd
        if not np.all(np.isfinite(g)):
            raise NumericalAbort(_first_bad_structure(obj, DT, dose(D, x)), it, "non-finite fluence gradient")
        x = np.clip(x + step * g, 0.0, cfg.x_max)
        if cfg.smoothing:
            x = np.clip(S @ x, 0.0, cfg.x_max)
    try:
        final = obj.value(dose(D, x))
    except NumericalAbort as exc:
        raise NumericalAbort(exc.structure, cfg.steps, "final evaluation failed") from None
    if trajectory is not None:
        trajectory[cfg.steps] = final
    return PlanResult(x, final, step, trajectory)


def _first_bad_structure(obj: GeudObjective, DT, d) -> str:
    for sid, gd in obj.term_dose_grads(d):
        if not np.all(np.isfinite(DT @ gd)):
            return sid
    return "<sum of terms>"


# ---------------------------------------------------------------- persistence


def write_fluence_csv(x, layout: BeamLayout, path) -> None:
    off = layout.offsets()
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["beam", "row", "col", "value"])
        for i, b in enumerate(layout.beams):
            seg = np.asarray(x[off[i]:off[i + 1]]).reshape(b.grid)
            for r in range(b.grid[0]):
                for c in range(b.grid[1]):
                    w.writerow([i, r, c, f"{seg[r, c]:.17g}"])


def read_fluence_csv(path, layout: BeamLayout) -> np.ndarray:
    off = layout.offsets()
    x = np.full(layout.n_beamlets, np.nan)
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            i, r, c = int(row["beam"]), int(row["row"]), int(row["col"])
            x[off[i] + r * layout.beams[i].grid[1] + c] = float(row["value"])
    if np.any(np.isnan(x)):
        raise ValueError(f"{path}: fluence file does not cover every beamlet")
    return x
