"""Large-N mean-field dynamics of the dissipative Dicke model.

With the cavity eliminated, the spin expectation values obey closed ODEs
with two couplings, a coherent one ``V0`` and a dissipative one ``V1``.
Linearizing around the fixed points gives the relaxation spectrum whose
slow eigenvalue closes at threshold.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.optimize import brentq

from .dicke import DickeParams, critical_coupling
from .errors import ConsistencyError, InvalidArgument
from .liouvillian import rk4_integrate, stable_step

EIG_TOL = 1e-10
ZERO_MODE_TOL = 1e-12
POOR_FIT = 0.05
# upper edge of the automatic fit window: the quadratic term under the root
# may be at most this fraction of the damping term squared
DEFAULT_CROSSOVER = 0.1

EXPONENT_HEADER = ["g_over_gc", "re_lambda", "im_lambda"]


class PoorFitWarning(UserWarning):
    """The local log-log slope wanders by more than the tolerance."""


class MeanFieldState(NamedTuple):
    sx: float
    sy: float
    sz: float


@dataclass(frozen=True)
class Couplings:
    v0: float
    v1: float


def couplings(p: DickeParams, dissipative: bool = True) -> Couplings:
    """``V0`` and ``V1`` of the cavity-mediated interaction.

    ``dissipative=False`` forces ``V1 = 0`` (closed-system limit).
    """
    den = p.omega_c ** 2 + p.kappa ** 2
    v0 = 2 * p.omega_c * p.g ** 2 / den
    v1 = 4 * p.omega_c * p.kappa * p.omega0 * p.g ** 2 / den ** 2 if dissipative else 0.0
    return Couplings(v0, v1)


def mean_field_rhs(s, p: DickeParams, dissipative: bool = True) -> np.ndarray:
    sx, sy, sz = (float(v) for v in s)
    c = couplings(p, dissipative)
    n = p.n_atoms
    return np.array([
        -p.omega0 * sy,
        p.omega0 * sx + (4 * c.v0 / n) * sx * sz + (4 * c.v1 / n) * sy * sz,
        -(4 * c.v0 / n) * sx * sy - (4 * c.v1 / n) * sy * sy,
    ])


def fixed_point(p: DickeParams, branch: str = "auto", sign: int = 1) -> MeanFieldState:
    """Stationary spin vector of length ``N/2``.

    ``branch="auto"`` picks the stable branch for the given coupling.
    """
    if branch == "auto":
        branch = "above" if p.g > p.gc else "below"
    x, z = _branch_xz(branch, p, couplings(p), sign)
    n = p.n_atoms
    return MeanFieldState(n * x / 2, 0.0, -n * z / 2)


def photon_number_from_spin(s, p: DickeParams) -> float:
    """Cavity occupation slaved to the spin, ``4 g^2 Sx^2 / (N (wc^2 + k^2))``."""
    return 4 * p.g ** 2 * float(s[0]) ** 2 / (p.n_atoms * (p.omega_c ** 2 + p.kappa ** 2))


def integrate_mean_field(s0, p: DickeParams, t_final: float, dt: float = 1e-2,
                         sample_interval: float | None = None, dissipative: bool = True):
    """RK4 integration; returns sample times and an ``(n_samples, 3)`` array."""
    y0 = np.asarray(s0, dtype=float)
    if y0.shape != (3,) or not np.all(np.isfinite(y0)):
        raise InvalidArgument("initial state must be three finite numbers")
    c = couplings(p, dissipative)
    radius = max(float(np.linalg.norm(y0)), 1.0)
    bound = p.omega0 + 8 * (c.v0 + c.v1) * radius / p.n_atoms
    dt = stable_step(bound, dt)

    def rhs(y):
        return mean_field_rhs(y.real, p, dissipative).astype(complex)

    times, states = rk4_integrate(rhs, y0, t_final, dt, sample_interval)
    return times, np.array([s.real for s in states])


# ------------------------------------------------------------------- stability


@dataclass
class Stability:
    matrix: np.ndarray
    eigenvalues: np.ndarray   # (0, slow, fast)
    branch: str


def _branch_xz(branch: str, p: DickeParams, c: Couplings, sign: int = 1) -> tuple[float, float]:
    if branch == "below":
        return 0.0, 1.0
    if branch == "above":
        if not p.g > critical_coupling(p):
            raise InvalidArgument("the above-threshold branch needs g > g_c")
        z = p.omega0 / (2 * c.v0)
        return sign * math.sqrt(1 - z * z), z
    raise InvalidArgument(f"unknown branch {branch!r}; use below or above")


def _quadratic_roots(b: float, c: float) -> tuple[complex, complex]:
    """Roots of ``l^2 + b l + c``, slow (smaller |Re|) first.

    Real roots use the product form for the small one to avoid cancellation.
    """
    disc = b * b / 4 - c
    if disc >= 0:
        big = -b / 2 - math.copysign(math.sqrt(disc), b) if b != 0 else -math.sqrt(disc)
        small = c / big if big != 0 else 0.0
        return complex(small), complex(big)
    w = math.sqrt(-disc)
    return complex(-b / 2, w), complex(-b / 2, -w)


def stability_matrix(branch: str, p: DickeParams, dissipative: bool = True,
                     sign: int = 1) -> Stability:
    """Linearization ``d delta/dt = M delta`` around a fixed point.

    Eigenvalues come from the closed forms
    ``-V1 +- sqrt(V1^2 - w0(w0 - 2V0))`` below threshold and
    ``-V1 z +- sqrt(V1^2 z^2 - 4 V0^2 x^2)`` above, and are checked against
    a numeric eigensolve.
    """
    c = couplings(p, dissipative)
    x, z = _branch_xz(branch, p, c, sign)
    w0 = p.omega0
    M = np.array([
        [0.0, -w0, 0.0],
        [w0 - 2 * c.v0 * z, -2 * c.v1 * z, 2 * c.v0 * x],
        [0.0, -2 * c.v0 * x, 0.0],
    ])
    if branch == "below":
        b, q = 2 * c.v1, w0 * (w0 - 2 * c.v0)
    else:
        b, q = 2 * c.v1 * z, 4 * c.v0 ** 2 * x ** 2
    slow, fast = _quadratic_roots(b, q)
    closed = np.array([0.0, slow, fast], dtype=complex)

    numeric = np.linalg.eigvals(M)
    scale = max(1.0, float(np.abs(M).max()))
    for lam in closed:
        if np.min(np.abs(numeric - lam)) > EIG_TOL * scale:
            raise ConsistencyError(
                f"closed-form eigenvalue {lam} not found among {numeric}")
    return Stability(M, closed, branch)


# --------------------------------------------------------------- critical exponent


@dataclass
class ExponentFit:
    nu: float
    fit_residual: float
    window: tuple[float, float]
    g_over_gc: np.ndarray
    eigenvalues: np.ndarray   # slow eigenvalue at each grid point

    def summary(self) -> dict:
        return {"nu": self.nu, "residual": self.fit_residual,
                "window": list(self.window)}


def _branch_of(side: str) -> str:
    if side not in ("below", "above"):
        raise InvalidArgument(f"side must be below or above, got {side!r}")
    return side


def _g_at(p: DickeParams, side: str, eps: float) -> DickeParams:
    return p.at(1 - eps if side == "below" else 1 + eps)


def crossover_ratio(p: DickeParams, side: str, eps: float) -> float:
    """Size of the quadratic term relative to the squared damping term."""
    q = _g_at(p, side, eps)
    c = couplings(q)
    if side == "below":
        return q.omega0 * (q.omega0 - 2 * c.v0) / c.v1 ** 2
    z = q.omega0 / (2 * c.v0)
    return 4 * c.v0 ** 2 * (1 - z * z) / (c.v1 * z) ** 2


def fit_window(p: DickeParams, side: str, dissipative: bool,
               crossover: float = DEFAULT_CROSSOVER) -> tuple[float, float]:
    """Range of ``|g - g_c|/g_c`` over which the slow rate is a pure power law.

    Without dissipation this is ``[1e-3, 1e-1]``.  With dissipation the
    rate is linear in the distance only while the damping dominates the
    root; the window then spans two decades below the crossover point.
    """
    lo, hi = 1e-3, 1e-1
    if not dissipative or crossover_ratio(p, side, hi) <= crossover:
        return lo, hi
    top = brentq(lambda e: crossover_ratio(p, side, e) - crossover, 1e-12, hi, xtol=1e-16)
    return top / 100, top


def critical_exponent_fit(p_base: DickeParams, side: str = "below", dissipative: bool = True,
                          window: tuple[float, float] | None = None,
                          n_points: int = 12) -> ExponentFit:
    """Power-law exponent of the slow eigenvalue near threshold.

    Fits ``log|Re lambda_slow|`` (dissipative) or ``log|lambda|`` (closed)
    against ``log|g - g_c|``.  The reported residual is the largest deviation
    of a local two-point slope from the fitted one.
    """
    side = _branch_of(side)
    if n_points < 8:
        raise InvalidArgument("need at least 8 grid points")
    lo, hi = window if window is not None else fit_window(p_base, side, dissipative)
    if not 0 < lo < hi < 1:
        raise InvalidArgument(f"bad fit window {(lo, hi)}")
    eps = np.geomspace(lo, hi, n_points)
    lams = []
    for e in eps:
        st = stability_matrix(side, _g_at(p_base, side, e), dissipative)
        pair = st.eigenvalues[1:]
        pair = pair[np.abs(pair) > ZERO_MODE_TOL]
        if len(pair) == 0:
            raise InvalidArgument(f"no nonzero eigenvalue at distance {e}")
        lams.append(pair[np.argmin(np.abs(pair.real))])
    lams = np.array(lams)
    y = np.abs(lams.real) if dissipative else np.abs(lams)
    if np.any(y <= 0):
        raise InvalidArgument("slow rate vanishes inside the fit window")
    lx, ly = np.log(eps), np.log(y)
    nu, _ = np.polyfit(lx, ly, 1)
    local = np.diff(ly) / np.diff(lx)
    resid = float(np.max(np.abs(local - nu)))
    if resid > POOR_FIT:
        warnings.warn(f"poor power-law fit: local slopes deviate by {resid:.3f}",
                      PoorFitWarning, stacklevel=2)
    ratio = 1 - eps if side == "below" else 1 + eps
    return ExponentFit(float(nu), resid, (float(lo), float(hi)), ratio, lams)


def write_exponent_csv(fit: ExponentFit, path: str | Path, comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh)
        w.writerow(EXPONENT_HEADER)
        for r, lam in zip(fit.g_over_gc, fit.eigenvalues):
            w.writerow([repr(float(r)), repr(float(lam.real)), repr(float(lam.imag))])


def write_exponent_json(fit: ExponentFit, path: str | Path) -> None:
    Path(path).write_text(json.dumps(fit.summary(), indent=2) + "\n")
