"""Elimination of damped bosonic modes coupled to a finite quantum system.

For modes ``a_k`` with damping ``kappa_k``, frequencies/couplings ``Omega^{k,k'}``
and drives ``S_k`` (system operators), the effective fields ``alpha_k`` obey

    d alpha_k/dt = -i[H_S, alpha_k] - i sum_k' Omega^{k,k'} alpha_k' - i S_k - kappa_k alpha_k.

Their stationary solution defines a Lindblad equation for the system alone with
Hamiltonian ``H_S + 1/2 sum_k (alpha_k^+ S_k + S_k^+ alpha_k)`` and jumps
``(kappa_k, alpha_k)``.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from numbers import Number
from pathlib import Path
from typing import Sequence, Union

import numpy as np
import scipy.linalg as la

from .errors import ConsistencyError, InvalidArgument, UnsupportedConfiguration
from .liouvillian import LindbladModel, rk4_integrate, stable_step

EPS_WARN = 0.3
EPS_HARD = 1.0
RESIDUAL_TOL = 1e-9

Coefficient = Union[float, np.ndarray, None]


class PerturbationWarning(UserWarning):
    """The effective fields are not small; the second-order expansion is strained."""


@dataclass(frozen=True)
class Mode:
    kappa: float
    drive: np.ndarray

    def __post_init__(self):
        if not self.kappa > 0:
            raise InvalidArgument(f"mode damping must be positive, got {self.kappa}")
        object.__setattr__(self, "drive", np.asarray(self.drive, dtype=complex))


@dataclass(frozen=True)
class CoupledModel:
    """System Hamiltonian, damped modes and the mode frequency/coupling table.

    ``omega[k][k']`` is a real scalar (multiple of the identity), a constant
    system operator, or ``None`` for no coupling.  Hermiticity of the mode
    Hamiltonian requires ``omega[k'][k] == omega[k][k']^+``.
    """

    h_sys: np.ndarray
    modes: tuple[Mode, ...]
    omega: tuple[tuple[Coefficient, ...], ...]

    def __post_init__(self):
        H = np.asarray(self.h_sys, dtype=complex)
        if H.ndim != 2 or H.shape[0] != H.shape[1]:
            raise InvalidArgument("h_sys must be square")
        if np.abs(H - H.conj().T).max(initial=0.0) > 1e-10:
            raise InvalidArgument("h_sys is not Hermitian")
        object.__setattr__(self, "h_sys", H)
        modes = tuple(self.modes)
        K = len(modes)
        if K == 0:
            raise InvalidArgument("at least one mode is required")
        for m in modes:
            if m.drive.shape != H.shape:
                raise InvalidArgument("mode drive dimension does not match h_sys")
        omega = tuple(tuple(row) for row in self.omega)
        if len(omega) != K or any(len(row) != K for row in omega):
            raise InvalidArgument(f"omega must be a {K}x{K} table")
        d = H.shape[0]
        for k in range(K):
            for q in range(K):
                a, b = _as_matrix(omega[k][q], d), _as_matrix(omega[q][k], d)
                if np.abs(a - b.conj().T).max(initial=0.0) > 1e-10:
                    raise InvalidArgument(f"omega[{k}][{q}] is not the adjoint of omega[{q}][{k}]")
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "omega", omega)

    @property
    def dim(self) -> int:
        return self.h_sys.shape[0]

    @classmethod
    def single_mode(cls, h_sys, kappa: float, drive, omega: Coefficient) -> "CoupledModel":
        return cls(h_sys, (Mode(kappa, drive),), ((omega,),))

    def scalar_frequencies(self) -> list[float] | None:
        """Per-mode scalar frequencies, or ``None`` if any coefficient is an
        operator or modes are coupled."""
        K = len(self.modes)
        out = []
        for k in range(K):
            for q in range(K):
                if q != k and self.omega[k][q] is not None and np.any(self.omega[k][q] != 0):
                    return None
            w = self.omega[k][k]
            if w is None:
                w = 0.0
            if not isinstance(w, Number):
                return None
            out.append(float(np.real(w)))
        return out


def _as_matrix(c: Coefficient, d: int) -> np.ndarray:
    if c is None:
        return np.zeros((d, d), dtype=complex)
    if isinstance(c, Number):
        return complex(c) * np.eye(d)
    c = np.asarray(c, dtype=complex)
    if c.shape != (d, d):
        raise InvalidArgument(f"omega coefficient has shape {c.shape}, expected {(d, d)}")
    return c


@dataclass
class EffectiveField:
    alphas: list[np.ndarray]
    epsilon: float = field(init=False)

    def __post_init__(self):
        self.alphas = [np.asarray(a, dtype=complex) for a in self.alphas]
        self.epsilon = max(float(np.linalg.norm(a, 2)) for a in self.alphas)


def field_rhs(model: CoupledModel, alphas: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Right-hand side of the effective-field equation."""
    H = model.h_sys
    d = model.dim
    out = []
    for k, mode in enumerate(model.modes):
        a = alphas[k]
        r = -1j * (H @ a - a @ H) - 1j * mode.drive - mode.kappa * a
        for q in range(len(model.modes)):
            c = model.omega[k][q]
            if c is None:
                continue
            r = r - 1j * (_as_matrix(c, d) @ alphas[q])
        out.append(r)
    return out


def residuals(model: CoupledModel, fields: EffectiveField) -> list[float]:
    return [float(np.linalg.norm(r)) for r in field_rhs(model, fields.alphas)]


def _solve_lu(model: CoupledModel) -> list[np.ndarray]:
    d = model.dim
    K = len(model.modes)
    n = d * d
    eye = np.eye(d)
    comm = 1j * (np.kron(eye, model.h_sys) - np.kron(model.h_sys.T, eye))
    M = np.zeros((K * n, K * n), dtype=complex)
    rhs = np.empty(K * n, dtype=complex)
    for k, mode in enumerate(model.modes):
        blk = slice(k * n, (k + 1) * n)
        M[blk, blk] = comm + mode.kappa * np.eye(n)
        for q in range(K):
            c = model.omega[k][q]
            if c is None:
                continue
            M[blk, q * n:(q + 1) * n] += 1j * np.kron(eye, _as_matrix(c, d))
        rhs[blk] = -1j * mode.drive.ravel(order="F")
    try:
        x = la.solve(M, rhs)
    except la.LinAlgError as exc:
        raise InvalidArgument(f"effective-field system is singular: {exc}") from exc
    return [x[k * n:(k + 1) * n].reshape(d, d, order="F") for k in range(K)]


def _solve_diagonal(model: CoupledModel, freqs: list[float]) -> list[np.ndarray]:
    E = np.real(np.diag(model.h_sys))
    gap = E[:, None] - E[None, :]
    return [-1j * m.drive / (1j * gap + 1j * w + m.kappa) for m, w in zip(model.modes, freqs)]


def _is_diagonal(H: np.ndarray, tol: float = 1e-12) -> bool:
    return np.abs(H - np.diag(np.diag(H))).max(initial=0.0) < tol


def solve_effective_fields(model: CoupledModel, method: str = "auto") -> EffectiveField:
    """Stationary effective fields.

    ``method`` is ``"lu"`` (one global linear solve over all modes),
    ``"diagonal"`` (closed form, needs diagonal ``H_S`` and scalar uncoupled
    frequencies) or ``"auto"`` (closed form when applicable).
    """
    freqs = model.scalar_frequencies()
    diag_ok = freqs is not None and _is_diagonal(model.h_sys)
    if method == "auto":
        method = "diagonal" if diag_ok else "lu"
    if method == "diagonal":
        if not diag_ok:
            raise UnsupportedConfiguration(
                "closed-form fields need a diagonal h_sys and scalar uncoupled frequencies")
        alphas = _solve_diagonal(model, freqs)
    elif method == "lu":
        alphas = _solve_lu(model)
    else:
        raise InvalidArgument(f"unknown method {method!r}")
    fields = EffectiveField(alphas)
    scale = max(1.0, float(np.linalg.norm(model.h_sys, 2)))
    worst = max(residuals(model, fields))
    if worst > RESIDUAL_TOL * scale:
        raise ConsistencyError(f"effective-field residual {worst:.2e} above tolerance")
    return fields


def evolve_effective_fields(model: CoupledModel, alpha0: Sequence[np.ndarray], t_final: float,
                            dt: float = 1e-3, sample_interval: float | None = None):
    """RK4 integration of the time-dependent field equation.

    Returns ``(times, fields)`` with one :class:`EffectiveField` per sample.
    """
    K = len(model.modes)
    if len(alpha0) != K:
        raise InvalidArgument(f"expected {K} initial fields, got {len(alpha0)}")
    y0 = np.array([np.asarray(a, dtype=complex) for a in alpha0])
    if y0.shape[1:] != (model.dim, model.dim):
        raise InvalidArgument("initial field dimension does not match the system")
    bound = 2 * np.linalg.norm(model.h_sys, 2) + max(m.kappa for m in model.modes)
    bound += sum(np.linalg.norm(_as_matrix(c, model.dim), 2) for row in model.omega for c in row)
    h = stable_step(bound, dt)

    def rhs(y):
        return np.array(field_rhs(model, list(y)))

    times, states = rk4_integrate(rhs, y0, t_final, h, sample_interval)
    return times, [EffectiveField(list(s)) for s in states]


def adiabatic_fields(model: CoupledModel) -> EffectiveField:
    """Fields with the retardation commutator dropped: ``-i S_k / (i Omega_k + kappa_k)``."""
    freqs = model.scalar_frequencies()
    if freqs is None:
        raise UnsupportedConfiguration(
            "adiabatic elimination needs scalar, uncoupled mode frequencies")
    return EffectiveField([-1j * m.drive / (1j * w + m.kappa) for m, w in zip(model.modes, freqs)])


def build_effective_model(fields: EffectiveField, model: CoupledModel,
                          allow_large_epsilon: bool = False) -> LindbladModel:
    """Assemble the system-only Lindblad model from solved fields."""
    if len(fields.alphas) != len(model.modes):
        raise InvalidArgument("number of fields does not match number of modes")
    eps = fields.epsilon
    if eps > EPS_HARD and not allow_large_epsilon:
        raise InvalidArgument(
            f"effective fields have norm {eps:.3g} > {EPS_HARD}; pass allow_large_epsilon=True "
            "to build the model anyway")
    if eps > EPS_WARN:
        warnings.warn(f"effective-field norm {eps:.3g} exceeds {EPS_WARN}",
                      PerturbationWarning, stacklevel=2)
    H = model.h_sys.copy()
    for a, mode in zip(fields.alphas, model.modes):
        S = mode.drive
        H = H + 0.5 * (a.conj().T @ S + S.conj().T @ a)
    skew = np.abs(H - H.conj().T).max(initial=0.0)
    if skew > 1e-9:
        raise ConsistencyError(f"effective Hamiltonian is not Hermitian (deviation {skew:.2e})")
    H = 0.5 * (H + H.conj().T)
    jumps = tuple((m.kappa, a) for a, m in zip(fields.alphas, model.modes))
    return LindbladModel(H, jumps)


# ----------------------------------------------------------------------- export


def _encode(M: np.ndarray) -> list:
    return [[[float(z.real), float(z.imag)] for z in row] for row in np.asarray(M)]


def _decode(rows) -> np.ndarray:
    return np.array([[complex(re, im) for re, im in row] for row in rows], dtype=complex)


def effective_model_document(model: LindbladModel, epsilon: float) -> dict:
    return {
        "h_eff": _encode(model.hamiltonian),
        "jumps": [{"rate": rate, "matrix": _encode(op)} for rate, op in model.jumps],
        "epsilon": float(epsilon),
    }


def write_effective_model(model: LindbladModel, epsilon: float, path: str | Path) -> None:
    Path(path).write_text(json.dumps(effective_model_document(model, epsilon), indent=1))


def read_effective_model(path: str | Path) -> tuple[LindbladModel, float]:
    doc = json.loads(Path(path).read_text())
    jumps = tuple((j["rate"], _decode(j["matrix"])) for j in doc["jumps"])
    return LindbladModel(_decode(doc["h_eff"]), jumps), float(doc["epsilon"])
