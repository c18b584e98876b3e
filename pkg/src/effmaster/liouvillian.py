"""Lindblad generators: assembly, time evolution, steady states, spectra.

The dissipator carries a factor two, ``D[O]rho = 2 O rho O^+ - O^+O rho - rho O^+O``,
so a bare mode with rate ``kappa`` loses photons at ``2 kappa``.

Superoperators act on column-stacked vectors, ``vec(A X B) = (B^T (x) A) vec(X)``.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components

from .errors import (
    ConsistencyError,
    DegenerateSteadyState,
    IntegrationError,
    InvalidArgument,
    NumericalError,
    ResourceLimit,
)
from .operators import check_density_matrix

log = logging.getLogger(__name__)

DEFAULT_SPECTRUM_GUARD = 20000
TRACE_DRIFT_TOL = 1e-6


@dataclass(frozen=True)
class LindbladModel:
    """Hamiltonian plus ``(rate, jump)`` channels, energies in units of kappa."""

    hamiltonian: np.ndarray
    jumps: tuple[tuple[float, np.ndarray], ...] = ()

    def __post_init__(self):
        H = np.asarray(self.hamiltonian, dtype=complex)
        if H.ndim != 2 or H.shape[0] != H.shape[1]:
            raise InvalidArgument(f"Hamiltonian must be square, got shape {H.shape}")
        if np.max(np.abs(H - H.conj().T), initial=0.0) > 1e-10:
            raise InvalidArgument("Hamiltonian is not Hermitian")
        jumps = []
        for rate, op in self.jumps:
            op = np.asarray(op, dtype=complex)
            if op.shape != H.shape:
                raise InvalidArgument(f"jump shape {op.shape} does not match Hamiltonian {H.shape}")
            if not rate >= 0:
                raise InvalidArgument(f"jump rate must be nonnegative, got {rate}")
            jumps.append((float(rate), op))
        object.__setattr__(self, "hamiltonian", H)
        object.__setattr__(self, "jumps", tuple(jumps))

    @property
    def dim(self) -> int:
        return self.hamiltonian.shape[0]

    def nonhermitian_part(self) -> np.ndarray:
        """``-iH - sum_j rate_j O_j^+ O_j``; the generator is ``A rho + rho A^+ + jumps``."""
        A = -1j * self.hamiltonian
        for rate, op in self.jumps:
            A = A - rate * (op.conj().T @ op)
        return A

    def apply(self, rho: np.ndarray) -> np.ndarray:
        """Action of the generator on a matrix, without building the superoperator."""
        A = self.nonhermitian_part()
        out = A @ rho + rho @ A.conj().T
        for rate, op in self.jumps:
            out += 2 * rate * (op @ rho @ op.conj().T)
        return out

    def norm_bound(self) -> float:
        """Upper bound on the induced 2-norm of the generator."""
        bound = 2 * np.linalg.norm(self.hamiltonian, 2)
        for rate, op in self.jumps:
            bound += 4 * rate * np.linalg.norm(op, 2) ** 2
        return float(bound)


def vec(X: np.ndarray) -> np.ndarray:
    return np.asarray(X).ravel(order="F")


def unvec(v: np.ndarray, dim: int | None = None) -> np.ndarray:
    v = np.asarray(v)
    if dim is None:
        dim = math.isqrt(v.size)
    if dim * dim != v.size:
        raise InvalidArgument(f"vector of length {v.size} is not a vectorized square matrix")
    return v.reshape(dim, dim, order="F")


def build_liouvillian(model: LindbladModel, sparse: bool = False):
    """Superoperator matrix of ``model`` (dense ndarray or CSR matrix)."""
    d = model.dim
    H = model.hamiltonian
    if sparse:
        eye = sp.identity(d, dtype=complex, format="csr")
        kron = sp.kron
        H = sp.csr_matrix(H)
    else:
        eye = np.eye(d, dtype=complex)
        kron = np.kron
    L = -1j * (kron(eye, H) - kron(H.T, eye))
    for rate, op in model.jumps:
        if rate == 0:
            continue
        O = sp.csr_matrix(op) if sparse else op
        OdO = O.conj().T @ O
        L = L + rate * (2 * kron(O.conj(), O) - kron(eye, OdO) - kron(OdO.T, eye))
    return L.tocsr() if sparse else L


# --------------------------------------------------------------------- evolution


@dataclass
class Evolution:
    times: np.ndarray
    states: list[np.ndarray]

    def expect(self, op: np.ndarray) -> np.ndarray:
        return np.array([np.einsum("ij,ji->", op, r) for r in self.states])


def rk4_integrate(rhs: Callable[[np.ndarray], np.ndarray], y0: np.ndarray, t_final: float,
                  dt: float, sample_interval: float | None = None,
                  on_sample: Callable[[float, np.ndarray], None] | None = None):
    """Fixed-step RK4 for an autonomous ODE on arrays.

    ``dt`` is shrunk so that it divides ``sample_interval`` exactly.  Returns
    the sample times and the sampled states (including ``t = 0``).
    """
    if not dt > 0:
        raise InvalidArgument(f"dt must be positive, got {dt}")
    if not t_final >= 0:
        raise InvalidArgument(f"t_final must be nonnegative, got {t_final}")
    if sample_interval is None:
        sample_interval = t_final / 200 if t_final > 0 else dt
    n_sub = max(1, math.ceil(sample_interval / dt - 1e-9))
    h = sample_interval / n_sub
    n_samples = int(round(t_final / sample_interval))
    y = np.array(y0, dtype=complex)
    times = [0.0]
    states = [y.copy()]
    if on_sample:
        on_sample(0.0, y)
    for k in range(1, n_samples + 1):
        for _ in range(n_sub):
            k1 = rhs(y)
            k2 = rhs(y + 0.5 * h * k1)
            k3 = rhs(y + 0.5 * h * k2)
            k4 = rhs(y + h * k3)
            y = y + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
        t = k * sample_interval
        times.append(t)
        states.append(y.copy())
        if on_sample:
            on_sample(t, y)
    return np.array(times), states


def stable_step(norm_bound: float, dt: float, limit: float = 0.1) -> float:
    """Shrink ``dt`` until ``norm_bound * dt <= limit``."""
    while norm_bound * dt > limit:
        dt /= 2
    return dt


def evolve(model: LindbladModel, rho0: np.ndarray, t_final: float, dt: float = 1e-3,
           sample_interval: float | None = None) -> Evolution:
    """Integrate ``d rho/dt = L rho`` with fixed-step RK4.

    The trace is checked at every emitted sample but never renormalized; a
    drift above ``1e-6`` raises :class:`IntegrationError`.
    """
    rho0 = check_density_matrix(rho0)
    if rho0.shape[0] != model.dim:
        raise InvalidArgument(f"rho0 has dimension {rho0.shape[0]}, model has {model.dim}")
    h = stable_step(model.norm_bound(), dt)
    if h < dt:
        log.info("step reduced from %g to %g for stability", dt, h)
    A = model.nonhermitian_part()
    Ad = A.conj().T
    jumps = [(2 * r, op, op.conj().T) for r, op in model.jumps if r != 0]

    def rhs(rho):
        out = A @ rho + rho @ Ad
        for w, op, opd in jumps:
            out += w * (op @ rho @ opd)
        return out

    def check(t, rho):
        drift = abs(np.trace(rho) - 1.0)
        if not np.isfinite(drift) or drift > TRACE_DRIFT_TOL:
            raise IntegrationError(
                f"trace drifted by {drift:.3e} at t={t:g}; reduce dt (currently {h:g})")

    times, states = rk4_integrate(rhs, rho0, t_final, h, sample_interval, on_sample=check)
    return Evolution(times, states)


# ------------------------------------------------------------------ steady state


def _trace_row(d: int) -> np.ndarray:
    row = np.zeros(d * d, dtype=complex)
    row[np.arange(d) * (d + 1)] = 1.0
    return row


def _finish_state(rho: np.ndarray, pos_tol: float = 1e-8) -> np.ndarray:
    rho = 0.5 * (rho + rho.conj().T)
    rho = rho / np.trace(rho).real
    lmin = np.linalg.eigvalsh(rho).min()
    if lmin < -pos_tol:
        raise NumericalError(f"steady state is not positive (min eigenvalue {lmin:.3e})")
    return rho


def steady_state(superop, rcond_tol: float = 1e-13) -> np.ndarray:
    """Unique steady state of a superoperator by trace-row replacement.

    Row 0 of ``L`` (the ``(0, 0)`` matrix element) is replaced by the trace
    functional and ``L' vec(rho) = e_0`` is solved directly.  Accepts a dense
    array or a scipy sparse matrix (sparse LU).
    """
    n = superop.shape[0]
    d = math.isqrt(n)
    if d * d != n or superop.shape != (n, n):
        raise InvalidArgument(f"superoperator shape {superop.shape} is not d^2 x d^2")
    rhs = np.zeros(n, dtype=complex)
    rhs[0] = 1.0
    trace_row = _trace_row(d)
    if sp.issparse(superop):
        M = sp.lil_matrix(superop, dtype=complex)
        M[0, :] = trace_row
        try:
            lu = spla.splu(M.tocsc())
        except RuntimeError as exc:
            raise DegenerateSteadyState(f"steady state is not unique: {exc}") from exc
        x = lu.solve(rhs)
        residual = np.linalg.norm(superop @ x)
    else:
        M = np.array(superop, dtype=complex)
        M[0, :] = trace_row
        with warnings.catch_warnings():
            # exact singularity is reported through rcond below
            warnings.simplefilter("ignore", la.LinAlgWarning)
            lu, piv = la.lu_factor(M, check_finite=True)
        anorm = np.abs(M).sum(axis=0).max()
        rcond, _ = la.lapack.zgecon(lu, anorm, norm="1")
        if rcond < rcond_tol:
            raise DegenerateSteadyState(
                f"steady state is not unique (reciprocal condition {rcond:.2e})")
        x = la.lu_solve((lu, piv), rhs)
        residual = np.linalg.norm(superop @ x)
    if not np.isfinite(residual) or residual > 1e-8 * max(1.0, np.linalg.norm(x)):
        raise DegenerateSteadyState(f"steady-state residual {residual:.2e} too large")
    return _finish_state(unvec(x, d))


@dataclass
class FrameCoarsening:
    """Coarse space for :func:`steady_state_krylov`.

    The coarse states are ``U (X embedded on retained) U^+`` for matrices ``X``
    on the ``retained`` basis indices; the coarse operator is the generator
    transformed by ``U`` and compressed onto that subspace.
    """

    frame: np.ndarray
    retained: np.ndarray


class _BlockLindblad:
    """Generator restricted to matrices that are block diagonal in ``sectors``."""

    def __init__(self, model: LindbladModel, sectors: Sequence[np.ndarray], tol: float = 1e-12):
        d = model.dim
        self.sectors = [np.asarray(s, dtype=int) for s in sectors]
        owner = np.full(d, -1)
        for j, s in enumerate(self.sectors):
            if np.any(owner[s] >= 0):
                raise InvalidArgument("sectors overlap")
            owner[s] = j
        if np.any(owner < 0):
            raise InvalidArgument("sectors do not cover the Hilbert space")
        self.owner = owner
        A = model.nonhermitian_part()
        scale = max(1.0, np.abs(A).max())
        mask = owner[:, None] != owner[None, :]
        if np.abs(A[mask]).max(initial=0.0) > tol * scale:
            raise InvalidArgument("Hamiltonian and jump norms are not block diagonal in sectors")
        self.A = [A[np.ix_(s, s)] for s in self.sectors]
        self.links = []
        for rate, op in model.jumps:
            if rate == 0:
                continue
            for j, s in enumerate(self.sectors):
                col = np.abs(op[:, s]).max(axis=1)
                targets = np.unique(owner[col > tol * max(1.0, col.max(initial=0.0))])
                if targets.size > 1:
                    raise InvalidArgument(f"a jump maps sector {j} into several sectors")
                if targets.size == 1:
                    i = int(targets[0])
                    self.links.append((2 * rate, i, j, op[np.ix_(self.sectors[i], s)]))
        self.sizes = [len(s) for s in self.sectors]
        self.offsets = np.concatenate([[0], np.cumsum([n * n for n in self.sizes])])

    def split(self, x):
        return [x[self.offsets[j]:self.offsets[j + 1]].reshape(n, n)
                for j, n in enumerate(self.sizes)]

    def join(self, blocks):
        return np.concatenate([b.ravel() for b in blocks])

    def apply(self, X):
        Y = [A @ x + x @ A.conj().T for A, x in zip(self.A, X)]
        for w, i, j, C in self.links:
            Y[i] += w * (C @ X[j] @ C.conj().T)
        return Y

    def trace(self, X):
        return sum(np.trace(x) for x in X)

    def assemble(self, X, d):
        rho = np.zeros((d, d), dtype=complex)
        for s, x in zip(self.sectors, X):
            rho[np.ix_(s, s)] = x
        return rho


def _coarse_operator(model: LindbladModel, coarse: FrameCoarsening) -> np.ndarray:
    U = np.asarray(coarse.frame, dtype=complex)
    r = np.asarray(coarse.retained, dtype=int)
    Ud = U.conj().T
    H00 = (Ud @ model.hamiltonian @ U)[np.ix_(r, r)]
    k = len(r)
    eye = np.eye(k)
    E = -1j * (np.kron(eye, H00) - np.kron(H00.T, eye))
    for rate, op in model.jumps:
        ct = Ud @ op @ U
        c00 = ct[np.ix_(r, r)]
        cc00 = (ct.conj().T @ ct)[np.ix_(r, r)]
        E += rate * (2 * np.kron(c00.conj(), c00) - np.kron(eye, cc00) - np.kron(cc00.T, eye))
    return E


def steady_state_krylov(model: LindbladModel, *, sectors: Sequence[np.ndarray] | None = None,
                        coarse: FrameCoarsening | None = None, anchor: int = 0,
                        rtol: float = 1e-11, restart: int = 150, maxiter: int = 40,
                        return_info: bool = False):
    """Matrix-free steady state for models too large for sparse LU.

    Solves ``L rho + sigma Tr[rho] = sigma`` (``sigma = |anchor><anchor|``) with
    GMRES.  Preconditioner: inverse of the Sylvester part ``A rho + rho A^+``,
    optionally combined with a coarse-space correction from ``coarse``.  When
    ``sectors`` is given (a basis partition that block-diagonalizes ``H`` and
    in which each jump maps every sector into a single sector) only the block
    diagonal part of ``rho`` is solved for.
    """
    d = model.dim
    if sectors is None:
        sectors = [np.arange(d)]
    bl = _BlockLindblad(model, sectors)
    a_sec = bl.owner[anchor]
    a_pos = int(np.nonzero(bl.sectors[a_sec] == anchor)[0][0])

    def apply_m(X):
        Y = bl.apply(X)
        Y[a_sec][a_pos, a_pos] += bl.trace(X)
        return Y

    # eigenbasis Sylvester solve; conditioning of the eigenvectors only affects
    # preconditioner quality, the outer residual is checked independently
    eig = []
    for A in bl.A:
        lam, V = la.eig(A)
        Vi = la.inv(V)
        eig.append((V, Vi, lam[:, None] + lam.conj()[None, :]))

    def sylvester_inv(R):
        return [V @ ((Vi @ x @ Vi.conj().T) / den) @ V.conj().T for (V, Vi, den), x in zip(eig, R)]

    sigma = [np.zeros((n, n), dtype=complex) for n in bl.sizes]
    sigma[a_sec][a_pos, a_pos] = 1.0

    if coarse is not None:
        U = np.asarray(coarse.frame, dtype=complex)
        r = np.asarray(coarse.retained, dtype=int)
        k = len(r)
        r_owner = bl.owner[r]
        same = (r_owner[:, None] == r_owner[None, :]).ravel(order="F")
        sel = np.nonzero(same)[0]
        Ub = [U[np.ix_(s, s)] for s in bl.sectors]
        mask = bl.owner[:, None] != bl.owner[None, :]
        if np.abs(U[mask]).max(initial=0.0) > 1e-12:
            raise InvalidArgument("coarse frame is not block diagonal in sectors")
        parts = []
        for j, s in enumerate(bl.sectors):
            q = np.nonzero(r_owner == j)[0]
            pos = np.searchsorted(s, r[q]) if np.all(np.diff(s) > 0) else \
                np.array([int(np.nonzero(s == g)[0][0]) for g in r[q]], dtype=int)
            parts.append((q, pos))

        def restrict(R):
            Q = np.zeros((k, k), dtype=complex)
            for (q, pos), u, x in zip(parts, Ub, R):
                if q.size:
                    Q[np.ix_(q, q)] = (u.conj().T @ x @ u)[np.ix_(pos, pos)]
            return Q.ravel(order="F")[sel]

        def prolong(v):
            flat = np.zeros(k * k, dtype=complex)
            flat[sel] = v
            Q = flat.reshape(k, k, order="F")
            out = []
            for (q, pos), u, n in zip(parts, Ub, bl.sizes):
                F = np.zeros((n, n), dtype=complex)
                if q.size:
                    F[np.ix_(pos, pos)] = Q[np.ix_(q, q)]
                out.append(u @ F @ u.conj().T)
            return out

        E = _coarse_operator(model, coarse)[np.ix_(sel, sel)]
        tr_coarse = np.eye(k).ravel(order="F")[sel]
        E = E + np.outer(restrict(sigma), tr_coarse)
        lu_e = la.lu_factor(E)

        def precondition(R):
            Zq = prolong(la.lu_solve(lu_e, restrict(R)))
            MZ = apply_m(Zq)
            S = sylvester_inv([x - y for x, y in zip(R, MZ)])
            return [s_ + z for s_, z in zip(S, Zq)]
    else:
        precondition = sylvester_inv

    n = int(bl.offsets[-1])
    Mop = spla.LinearOperator((n, n), matvec=lambda x: bl.join(apply_m(bl.split(x))), dtype=complex)
    Pop = spla.LinearOperator((n, n), matvec=lambda x: bl.join(precondition(bl.split(x))),
                              dtype=complex)
    count = [0]

    def callback(_):
        count[0] += 1

    x, info = spla.gmres(Mop, bl.join(sigma), M=Pop, rtol=rtol, atol=0.0, restart=restart,
                         maxiter=maxiter, callback=callback, callback_type="pr_norm")
    X = bl.split(x)
    residual = float(np.linalg.norm(bl.join(bl.apply(X))))
    log.info("krylov steady state: %d iterations, residual %.2e", count[0], residual)
    if not np.isfinite(residual) or residual > 1e-8:
        raise NumericalError(f"GMRES did not converge (info={info}, residual {residual:.2e})")
    rho = _finish_state(bl.assemble(X, d))
    if return_info:
        return rho, {"iterations": count[0], "residual": residual}
    return rho


# ---------------------------------------------------------------------- spectra


@dataclass
class Spectrum:
    eigenvalues: np.ndarray
    vectors: np.ndarray | None = field(default=None, repr=False)

    def __len__(self):
        return len(self.eigenvalues)

    def slow(self, cutoff: float) -> np.ndarray:
        """Eigenvalues with real part above ``cutoff``."""
        return self.eigenvalues[self.eigenvalues.real > cutoff]


def sort_order(eigenvalues: np.ndarray) -> np.ndarray:
    """Descending real part, ties (to 1e-10) by ascending imaginary part."""
    ev = np.asarray(eigenvalues)
    return np.lexsort((ev.imag, -np.round(ev.real, 10)))


def _blocks(L) -> list[np.ndarray]:
    pattern = sp.csr_matrix(L) if not sp.issparse(L) else L.tocsr()
    pattern = abs(pattern) > 0
    n_comp, labels = connected_components(pattern, directed=False)
    return [np.nonzero(labels == c)[0] for c in range(n_comp)]


def spectrum(superop, want_vectors: bool = False, max_dim: int = DEFAULT_SPECTRUM_GUARD) -> Spectrum:
    """Full eigendecomposition of a superoperator.

    The matrix is split into the connected components of its sparsity
    pattern (symmetry sectors) and each block is diagonalized densely.
    """
    n = superop.shape[0]
    if n > max_dim:
        raise ResourceLimit(
            f"superoperator dimension {n} exceeds the dense guard {max_dim}; "
            "use the sparse or Krylov steady-state path instead")
    parts = _blocks(superop)
    vals, vecs = [], []
    for idx in parts:
        if sp.issparse(superop):
            block = superop[idx][:, idx].toarray()
        else:
            block = np.asarray(superop)[np.ix_(idx, idx)]
        if want_vectors:
            w, v = la.eig(block)
            full = np.zeros((n, len(idx)), dtype=complex)
            full[idx, :] = v
            vecs.append(full)
        else:
            w = la.eigvals(block, overwrite_a=True)
        vals.append(w)
    ev = np.concatenate(vals)
    order = sort_order(ev)
    ev = ev[order]
    V = np.concatenate(vecs, axis=1)[:, order] if want_vectors else None
    if ev.real.max() > 1e-6:
        raise ConsistencyError(f"eigenvalue with positive real part {ev.real.max():.3e}")
    return Spectrum(ev, V)


def write_spectrum_csv(spect: Spectrum, path: str | Path, comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh)
        w.writerow(["re_lambda", "im_lambda"])
        for lam in spect.eigenvalues:
            w.writerow([repr(float(lam.real)), repr(float(lam.imag))])
