"""Dissipative Dicke model: N atoms collectively coupled to one damped cavity mode.

Full model (spin (x) field):

    H = omega0 Sz + omega_c a^+a + (2g/sqrt(N)) Sx (a + a^+),   jump (kappa, a)

Atom-only model: the cavity is eliminated with the effective field
``alpha = alpha_+ S+ + alpha_- S-``.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable

import numpy as np
import scipy.linalg as la

from .elimination import (
    CoupledModel,
    EffectiveField,
    PerturbationWarning,
    adiabatic_fields,
    build_effective_model,
    solve_effective_fields,
)
from .errors import EffMasterError, InvalidArgument
from .liouvillian import (
    FrameCoarsening,
    LindbladModel,
    build_liouvillian,
    evolve,
    steady_state,
    steady_state_krylov,
)
from .operators import boson_operators, expectation, noon_state, partial_trace, spin_operators

log = logging.getLogger(__name__)

SWEEP_HEADER = ["g_over_gc", "photon_number", "sz", "N", "method"]


@dataclass(frozen=True)
class DickeParams:
    n_atoms: int
    omega0: float = 0.1
    omega_c: float = 1.0
    kappa: float = 1.0
    g: float = 0.0

    def __post_init__(self):
        if int(self.n_atoms) != self.n_atoms or self.n_atoms < 1:
            raise InvalidArgument(f"n_atoms must be a positive integer, got {self.n_atoms}")
        for name in ("omega0", "omega_c", "kappa"):
            if not getattr(self, name) > 0:
                raise InvalidArgument(f"{name} must be positive")
        if not self.g >= 0:
            raise InvalidArgument("g must be nonnegative")
        object.__setattr__(self, "n_atoms", int(self.n_atoms))

    @property
    def gc(self) -> float:
        return critical_coupling(self)

    def at(self, g_over_gc: float) -> "DickeParams":
        """Copy with ``g = g_over_gc * g_c``."""
        return replace(self, g=g_over_gc * self.gc)


def critical_coupling(p: DickeParams) -> float:
    return math.sqrt(p.omega0 * (p.omega_c ** 2 + p.kappa ** 2) / (4 * p.omega_c))


def coupled_model(p: DickeParams) -> CoupledModel:
    S = spin_operators(p.n_atoms)
    drive = 2 * p.g * S.Sx / math.sqrt(p.n_atoms)
    return CoupledModel.single_mode(p.omega0 * S.Sz, p.kappa, drive, p.omega_c)


def full_model(p: DickeParams, n_max: int) -> LindbladModel:
    S = spin_operators(p.n_atoms)
    a, adag = boson_operators(n_max)
    Is = np.eye(p.n_atoms + 1)
    If = np.eye(n_max + 1)
    H = (p.omega0 * np.kron(S.Sz, If) + p.omega_c * np.kron(Is, adag @ a)
         + (2 * p.g / math.sqrt(p.n_atoms)) * np.kron(S.Sx, a + adag))
    return LindbladModel(H, ((p.kappa, np.kron(Is, a)),))


def alpha_coefficients(p: DickeParams, mode: str = "exact") -> tuple[complex, complex]:
    """``(alpha_+, alpha_-)`` multiplying ``S+`` and ``S-``."""
    root_n = math.sqrt(p.n_atoms)
    z = p.omega_c - 1j * p.kappa
    if mode == "exact":
        return (-p.g / (root_n * (z + p.omega0)), -p.g / (root_n * (z - p.omega0)))
    if mode == "expanded":
        lead = -p.g / (root_n * z)
        corr = p.g * p.omega0 / (root_n * z ** 2)
        return lead + corr, lead - corr
    if mode == "adiabatic":
        lead = -p.g / (root_n * z)
        return lead, lead
    raise InvalidArgument(f"unknown mode {mode!r}; use exact, expanded or adiabatic")


def effective_fields(p: DickeParams, mode: str = "exact") -> EffectiveField:
    S = spin_operators(p.n_atoms)
    ap, am = alpha_coefficients(p, mode)
    return EffectiveField([ap * S.Sp + am * S.Sm])


def effective_model(p: DickeParams, mode: str = "exact") -> LindbladModel:
    """Atom-only Lindblad model.

    The field norm grows like ``g sqrt(N)``, so the usual parameter range
    routinely exceeds the generic smallness thresholds; they are bypassed here.
    """
    fields = effective_fields(p, mode)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PerturbationWarning)
        return build_effective_model(fields, coupled_model(p), allow_large_epsilon=True)


def generic_effective_fields(p: DickeParams, method: str = "lu") -> EffectiveField:
    return solve_effective_fields(coupled_model(p), method=method)


def generic_adiabatic_fields(p: DickeParams) -> EffectiveField:
    return adiabatic_fields(coupled_model(p))


# ------------------------------------------------------------------ observables


def photon_number(rho_sys: np.ndarray, fields: EffectiveField) -> float:
    """Cavity occupation ``Tr[alpha^+ alpha rho_sys]`` summed over modes."""
    total = sum(expectation(a.conj().T @ a, rho_sys) for a in fields.alphas)
    if abs(total.imag) > 1e-10:
        raise EffMasterError(f"photon number has imaginary part {total.imag:.2e}")
    return float(total.real)


def observables(rho_sys: np.ndarray) -> dict[str, float]:
    n = rho_sys.shape[0] - 1
    S = spin_operators(n)
    return {
        "sz": float(expectation(S.Sz, rho_sys).real),
        "sx2": float(expectation(S.Sx @ S.Sx, rho_sys).real),
    }


def noon_fidelity(rho_sys: np.ndarray, n_atoms: int) -> float:
    psi = noon_state(n_atoms)
    return float(np.real(psi.conj() @ rho_sys @ psi))


def full_observables(rho: np.ndarray, p: DickeParams, n_max: int) -> dict[str, float]:
    """Photon number and spin moments of a full-model density matrix."""
    s, f = p.n_atoms + 1, n_max + 1
    rho_spin = partial_trace(rho, (s, f), keep=0)
    rho_field = partial_trace(rho, (s, f), keep=1)
    out = observables(rho_spin)
    out["photon_number"] = float(np.real(np.diag(rho_field) @ np.arange(f)))
    out["top_fock_population"] = float(np.real(rho_field[-1, -1]))
    return out


def mean_field_steady(p: DickeParams) -> tuple[float, float]:
    """Thermodynamic-limit ``(I_0, S^z_0)``."""
    g, gc, N = p.g, p.gc, p.n_atoms
    if g <= gc:
        return 0.0, -N / 2
    I0 = N * g ** 2 * (1 - gc ** 4 / g ** 4) / (p.omega_c ** 2 + p.kappa ** 2)
    return I0, -N * gc ** 2 / (2 * g ** 2)


# ---------------------------------------------------------------- steady states


def effective_steady_state(p: DickeParams, mode: str = "exact") -> np.ndarray:
    """Steady state of the atom-only model.

    At ``g = 0`` the spin is undamped and has no unique steady state; the
    ground state ``|-N/2>`` is returned by convention.
    """
    d = p.n_atoms + 1
    if p.g == 0:
        rho = np.zeros((d, d), dtype=complex)
        rho[0, 0] = 1.0
        return rho
    model = effective_model(p, mode)
    return steady_state(build_liouvillian(model, sparse=d * d > 2500))


def parity_sectors(p: DickeParams, n_max: int) -> list[np.ndarray]:
    """Basis indices of the full model split by ``(-1)^(m + N/2 + n)``."""
    m = np.repeat(np.arange(p.n_atoms + 1), n_max + 1)
    n = np.tile(np.arange(n_max + 1), p.n_atoms + 1)
    parity = (m + n) % 2
    return [np.nonzero(parity == 0)[0], np.nonzero(parity == 1)[0]]


def displaced_vacuum_coarsening(p: DickeParams, n_max: int) -> FrameCoarsening:
    """Coarse space ``D (X (x) |0><0|) D^+`` with ``D = exp(a^+ alpha - alpha^+ a)``."""
    alpha = generic_effective_fields(p, method="diagonal").alphas[0]
    a, adag = boson_operators(n_max)
    D = la.expm(np.kron(alpha, adag) - np.kron(alpha.conj().T, a))
    retained = np.arange(p.n_atoms + 1) * (n_max + 1)
    return FrameCoarsening(D, retained)


def initial_fock_cutoff(p: DickeParams) -> int:
    I0, _ = mean_field_steady(p)
    return max(1, math.ceil(4 * I0 + 6))


def full_steady_state_at(p: DickeParams, n_max: int, method: str = "auto") -> np.ndarray:
    """Full-model steady state at a fixed Fock cutoff.

    ``method``: ``"dense"`` (trace-row LU), ``"sparse"`` (sparse LU) or
    ``"krylov"`` (matrix-free GMRES in the even-parity sector with a
    displaced-vacuum coarse correction); ``"auto"`` picks by size.
    """
    model = full_model(p, n_max)
    d = model.dim
    if method == "auto":
        method = "sparse" if d * d <= 4000 else "krylov"
    if method == "dense":
        return steady_state(build_liouvillian(model))
    if method == "sparse":
        return steady_state(build_liouvillian(model, sparse=True))
    if method == "krylov":
        coarse = displaced_vacuum_coarsening(p, n_max) if p.g > 0 else None
        return steady_state_krylov(model, sectors=parity_sectors(p, n_max), coarse=coarse)
    raise InvalidArgument(f"unknown method {method!r}")


@dataclass
class FullSteadyState:
    rho: np.ndarray
    n_max: int
    photon_number: float
    sz: float
    history: list[tuple[int, float]]


def full_steady_state(p: DickeParams, n_max: int | None = None, tol: float = 1e-4,
                      growth: float = 2.0, max_cutoff: int = 80,
                      method: str = "auto") -> FullSteadyState:
    """Full-model steady state with an adaptive Fock cutoff.

    Starting from ``ceil(4 I_0 + 6)`` (or ``n_max``), the cutoff is multiplied
    by ``growth`` until the photon number changes by less than ``tol``.
    """
    cutoff = n_max if n_max is not None else initial_fock_cutoff(p)
    history = []
    prev = None
    while True:
        rho = full_steady_state_at(p, cutoff, method)
        obs = full_observables(rho, p, cutoff)
        history.append((cutoff, obs["photon_number"]))
        log.info("full steady state N=%d n_max=%d photons=%.8f", p.n_atoms, cutoff,
                 obs["photon_number"])
        if prev is not None and abs(obs["photon_number"] - prev[1]) < tol:
            return FullSteadyState(rho, cutoff, obs["photon_number"], obs["sz"], history)
        nxt = max(cutoff + 1, int(math.ceil(cutoff * growth)))
        if nxt > max_cutoff:
            raise EffMasterError(
                f"Fock cutoff did not converge below n_max={max_cutoff}: {history}")
        prev = (cutoff, obs["photon_number"])
        cutoff = nxt


# ------------------------------------------------------------------------ sweeps


def steady_state_sweep(p: DickeParams, g_values: Iterable[float], method: str = "effective",
                       n_max: int | None = None) -> list[dict]:
    """Steady-state photon number and inversion for each coupling in ``g_values``.

    ``method`` is ``effective``, ``full`` or ``meanfield``.  Rows whose solve
    fails carry ``ok=False`` and the error message.
    """
    g_values = list(g_values)
    if not g_values:
        raise InvalidArgument("g_values must not be empty")
    rows = []
    for g in g_values:
        q = replace(p, g=float(g))
        row = {"g": float(g), "g_over_gc": float(g) / q.gc, "N": q.n_atoms, "method": method,
               "ok": True, "error": ""}
        try:
            if method == "effective":
                rho = effective_steady_state(q)
                row["photon_number"] = photon_number(rho, effective_fields(q))
                row["sz"] = observables(rho)["sz"]
            elif method == "full":
                res = full_steady_state(q, n_max=n_max)
                row["photon_number"], row["sz"] = res.photon_number, res.sz
                row["n_max"] = res.n_max
            elif method == "meanfield":
                row["photon_number"], row["sz"] = mean_field_steady(q)
            else:
                raise InvalidArgument(f"unknown sweep method {method!r}")
        except InvalidArgument:
            raise
        except EffMasterError as exc:
            log.warning("sweep point g=%g failed: %s", g, exc)
            row.update(ok=False, error=str(exc), photon_number=float("nan"), sz=float("nan"))
        rows.append(row)
    return rows


def write_sweep_csv(rows: list[dict], path: str | Path, comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh)
        w.writerow(SWEEP_HEADER)
        for r in rows:
            w.writerow([repr(r["g_over_gc"]), repr(r["photon_number"]), repr(r["sz"]), r["N"],
                        r["method"]])


# --------------------------------------------------------------------- dynamics

EVOLVE_HEADER = ["t", "sx2", "sz", "photon_number", "noon_fidelity"]


def initial_spin_state(n_atoms: int, initial) -> np.ndarray:
    """Spin density matrix from a name (``spin_down``, ``noon``) or diagonal weights."""
    d = n_atoms + 1
    if isinstance(initial, str):
        if initial == "spin_down":
            rho = np.zeros((d, d), dtype=complex)
            rho[0, 0] = 1.0
            return rho
        if initial == "noon":
            psi = noon_state(n_atoms)
            return np.outer(psi, psi.conj())
        raise InvalidArgument(f"unknown initial state {initial!r}; use spin_down, noon or weights")
    w = np.asarray(initial, dtype=float)
    if w.shape != (d,) or np.any(w < 0) or not np.all(np.isfinite(w)) or w.sum() <= 0:
        raise InvalidArgument(f"initial weights must be {d} nonnegative numbers")
    if abs(w.sum() - 1) > 1e-9:
        raise InvalidArgument(f"initial weights sum to {w.sum()}, expected 1")
    return np.diag(w).astype(complex)


def evolve_observables(p: DickeParams, rho_spin: np.ndarray, t_final: float, dt: float = 1e-2,
                       sample_interval: float | None = None, method: str = "effective",
                       mode: str = "exact", n_max: int | None = None) -> dict[str, np.ndarray]:
    """Time series of ``<Sx^2>``, ``<Sz>``, photon number and NOON fidelity.

    The raw (complex) trace of each sampled state is returned under ``trace``.

    ``method="full"`` starts the cavity in vacuum and needs ``n_max``.
    """
    S = spin_operators(p.n_atoms)
    psi = noon_state(p.n_atoms)
    noon = np.outer(psi, psi.conj())
    if method == "effective":
        fields = effective_fields(p, mode)
        ev = evolve(effective_model(p, mode), rho_spin, t_final, dt, sample_interval)
        a = fields.alphas[0]
        n_op, sx2, sz, fid = a.conj().T @ a, S.Sx @ S.Sx, S.Sz, noon
    elif method == "full":
        if n_max is None:
            raise InvalidArgument("full evolution needs n_max")
        f = n_max + 1
        vac = np.zeros((f, f), dtype=complex)
        vac[0, 0] = 1.0
        If = np.eye(f)
        ev = evolve(full_model(p, n_max), np.kron(rho_spin, vac), t_final, dt, sample_interval)
        n_op = np.kron(np.eye(p.n_atoms + 1), np.diag(np.arange(f)))
        sx2, sz, fid = np.kron(S.Sx @ S.Sx, If), np.kron(S.Sz, If), np.kron(noon, If)
    else:
        raise InvalidArgument(f"unknown method {method!r}; use effective or full")
    return {
        "t": ev.times,
        "sx2": ev.expect(sx2).real,
        "sz": ev.expect(sz).real,
        "photon_number": ev.expect(n_op).real,
        "noon_fidelity": ev.expect(fid).real,
        "trace": np.array([np.trace(r) for r in ev.states]),
    }


def oscillation_frequency(times: np.ndarray, series: np.ndarray, pad: int = 8) -> float:
    """Dominant angular frequency of an oscillating signal.

    The signal is differentiated first, which suppresses slow drifts, then
    windowed and zero-padded; the periodogram peak is refined by a parabola.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(series, dtype=float)
    if len(t) < 8 or len(t) != len(y):
        raise InvalidArgument("need at least 8 equally long samples")
    h = t[1] - t[0]
    if not np.allclose(np.diff(t), h, rtol=1e-9, atol=1e-12):
        raise InvalidArgument("samples must be equally spaced")
    dy = np.gradient(y, h)
    dy = dy - dy.mean()
    n = pad * len(dy)
    power = np.abs(np.fft.rfft(dy * np.hanning(len(dy)), n)) ** 2
    k = int(np.argmax(power[1:])) + 1
    shift = 0.0
    if k + 1 < len(power):
        a, b, c = np.log(power[k - 1:k + 2] + 1e-300)
        den = a - 2 * b + c
        if den < 0:
            shift = 0.5 * (a - c) / den
    return float(2 * np.pi * (k + shift) / (n * h))


def write_evolve_csv(series: dict[str, np.ndarray], path: str | Path,
                     comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh)
        w.writerow(EVOLVE_HEADER)
        for row in zip(*(series[k] for k in EVOLVE_HEADER)):
            w.writerow([repr(float(v)) for v in row])
