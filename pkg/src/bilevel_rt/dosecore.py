"""Dose algebra and the gEUD product objective with its analytic gradient.

The objective is handled in log form::

    log F = -sum_t softplus(n_t * (log EUD0_t - log g_t))
            -sum_r softplus(n_r * (log g_r - log EUD0_r))

where ``g_s`` is the generalized mean of the doses of structure ``s`` with
exponent ``a_s``.  Targets (PTVs) use the first kind of factor; every other
structure (OARs, virtual PTVs, normal tissue) the second.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .case import PTV, VIRTUAL_PTV, CaseDefinition, GeudParams

EPS_DOSE = 1e-6  # Gy; floor applied before taking powers

ParamVector = dict  # structure id -> GeudParams


class NumericalAbort(ArithmeticError):
    """A non-finite value appeared while evaluating the objective."""

    def __init__(self, structure: str, iteration: int | None = None, detail: str = ""):
        where = f" at iteration {iteration}" if iteration is not None else ""
        super().__init__(f"non-finite objective term for structure {structure!r}{where}{': ' + detail if detail else ''}")
        self.structure = structure
        self.iteration = iteration


def dose(D, x) -> np.ndarray:
    """Voxel doses ``D @ x``."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or D.shape[1] != x.shape[0]:
        raise ValueError(f"deposition matrix has {D.shape[1]} beamlet columns but fluence has length {x.shape[0]}")
    return np.asarray(D @ x, dtype=float).ravel()


def _log_geud(d: np.ndarray, a: float):
    """log gEUD and the normalized weights ``d_j**a / sum(d**a)``.

    Shifted by the extreme log dose so every exponent is <= 0; expm1/log1p keep
    the result accurate when |a| is tiny as well as when it is large.
    """
    ld = np.log(np.maximum(d, EPS_DOSE))
    ref = ld.max() if a > 0 else ld.min()
    s = np.expm1(a * (ld - ref))
    w = s + 1.0
    return ref + np.log1p(s.mean()) / a, w / w.sum()


def geud(doses, a: float) -> float:
    """Generalized mean ``(mean(d**a))**(1/a)`` computed in the log domain.

    Doses are floored at ``EPS_DOSE``.

    Raises:
        ValueError: empty structure or ``a == 0``.
    """
    d = np.asarray(doses, dtype=float).ravel()
    if d.size == 0:
        raise ValueError("gEUD of an empty structure")
    if a == 0:
        raise ValueError("gEUD exponent a must be nonzero")
    return float(np.exp(_log_geud(d, a)[0]))


def default_params(case: CaseDefinition) -> ParamVector:
    """The case's own parameter values, with virtual PTVs linked to their parents."""
    params = {s.id: s.params for s in case.structures if s.params is not None}
    return link_virtual(params, case)


def link_virtual(params: ParamVector, case: CaseDefinition) -> ParamVector:
    """Re-derive every virtual PTV entry from its parent PTV: (EUD0 + 1, -a, n)."""
    out = dict(params)
    for s in case.structures:
        if s.kind == VIRTUAL_PTV:
            p = out[s.parent]
            out[s.id] = GeudParams(p.eud0 + 1.0, -p.a, p.n)
    return out


@dataclass(frozen=True)
class _Term:
    sid: str
    voxels: np.ndarray
    target: bool
    log_eud0: float
    a: float
    n: float


class GeudObjective:
    """log F and its dose-space gradient for one fixed (case, params) pair."""

    def __init__(self, case: CaseDefinition, params: ParamVector):
        terms = []
        for s in case.structures:
            p = params.get(s.id)
            if p is None or s.size == 0:
                continue
            if p.a == 0:
                raise ValueError(f"structure {s.id!r}: gEUD exponent a must be nonzero")
            if not p.eud0 > 0:
                raise ValueError(f"structure {s.id!r}: EUD0 must be positive, got {p.eud0}")
            terms.append(_Term(s.id, s.voxels, s.kind == PTV, float(np.log(p.eud0)), float(p.a), float(p.n)))
        self.terms = tuple(terms)
        self.n_voxels = case.grid.n_voxels

    def log_factors(self, d) -> dict[str, float]:
        return {t.sid: lf for t, lf, _ in self._each(np.asarray(d, dtype=float), need_grad=False)}

    def _each(self, d, need_grad):
        for t in self.terms:
            lg, w = _log_geud(d[t.voxels], t.a)
            z = t.n * (t.log_eud0 - lg) if t.target else t.n * (lg - t.log_eud0)
            log_factor = -np.logaddexp(0.0, z)
            coef = None
            if need_grad:
                # d log_factor / d log g
                coef = t.n * expit(z) if t.target else -t.n * expit(z)
            if not (np.isfinite(lg) and np.isfinite(log_factor)):
                raise NumericalAbort(t.sid, detail=f"log gEUD={lg}, log factor={log_factor}")
            yield t, float(log_factor), (coef, w)

    def term_dose_grads(self, d):
        """Yield (structure id, dose gradient of that structure's log factor)."""
        d = np.asarray(d, dtype=float)
        for t, _, (coef, w) in self._each(d, need_grad=True):
            g = np.zeros(self.n_voxels)
            g[t.voxels] = coef * w / np.maximum(d[t.voxels], EPS_DOSE)
            yield t.sid, g

    def value(self, d) -> float:
        return float(sum(lf for _, lf, _ in self._each(np.asarray(d, dtype=float), need_grad=False)))

    def value_and_dose_grad(self, d):
        """Return (log F, d log F / d dose).

        Voxels below the dose floor get the gradient of the floored value,
        so ascent can leave an all-zero start.
        """
        d = np.asarray(d, dtype=float)
        grad = np.zeros(self.n_voxels)
        total = 0.0
        for t, lf, (coef, w) in self._each(d, need_grad=True):
            total += lf
            g = coef * w / np.maximum(d[t.voxels], EPS_DOSE)
            if not np.all(np.isfinite(g)):
                raise NumericalAbort(t.sid, detail="non-finite gradient")
            grad[t.voxels] += g
        return total, grad


def objective_F(D, x, params: ParamVector, case: CaseDefinition) -> tuple[float, float]:
    """(F, log F) of fluence ``x``; F may underflow to 0.0 while log F stays finite."""
    logF = GeudObjective(case, params).value(dose(D, x))
    return float(np.exp(logF)), logF


def grad_logF(D, x, params: ParamVector, case: CaseDefinition) -> np.ndarray:
    """Analytic gradient of log F with respect to the beamlet intensities."""
    _, gd = GeudObjective(case, params).value_and_dose_grad(dose(D, x))
    return np.asarray(D.T @ gd).ravel()


def column_norm(D) -> float:
    """Induced 1-norm: the largest absolute column sum."""
    if sp.issparse(D):
        return float(np.max(np.asarray(abs(D).sum(axis=0)).ravel()))
    return float(np.max(np.abs(np.asarray(D)).sum(axis=0)))
