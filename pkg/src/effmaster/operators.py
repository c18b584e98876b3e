"""Dense operators on small Hilbert spaces.

Operators are plain ``numpy`` complex arrays.  Basis conventions used
throughout the package:

* collective spin: symmetric subspace of ``N`` two-level atoms, basis
  ``|m>`` ascending in ``m = -N/2, ..., N/2``;
* boson mode: Fock basis ``|n>`` ascending, truncated at ``n_max``;
* composite spaces: ``spin (x) field`` via :func:`numpy.kron`, i.e. the
  field index runs fastest.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import InvalidArgument

HERMITIAN_TOL = 1e-12


class SpinOperators(NamedTuple):
    Sx: np.ndarray
    Sy: np.ndarray
    Sz: np.ndarray
    Sp: np.ndarray
    Sm: np.ndarray


class BosonOperators(NamedTuple):
    a: np.ndarray
    adag: np.ndarray


def _check_square(A: np.ndarray, name: str = "operator") -> np.ndarray:
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidArgument(f"{name} must be a square matrix, got shape {A.shape}")
    return A


def spin_operators(n_atoms: int) -> SpinOperators:
    """Collective spin operators of ``n_atoms`` spin-1/2 particles on the
    maximal-spin subspace ``S = n_atoms / 2``."""
    if int(n_atoms) != n_atoms or n_atoms < 1:
        raise InvalidArgument(f"n_atoms must be a positive integer, got {n_atoms!r}")
    n_atoms = int(n_atoms)
    s = n_atoms / 2
    m = np.arange(-s, s + 1)
    # S+|m> = sqrt(S(S+1) - m(m+1)) |m+1>
    ladder = np.sqrt(s * (s + 1) - m[:-1] * (m[:-1] + 1))
    sp = np.diag(ladder, -1).astype(complex)
    sm = sp.T.copy()
    sx = 0.5 * (sp + sm)
    sy = -0.5j * (sp - sm)
    sz = np.diag(m).astype(complex)
    return SpinOperators(sx, sy, sz, sp, sm)


def boson_operators(n_max: int) -> BosonOperators:
    """Annihilation/creation operators on the Fock space ``0..n_max``."""
    if int(n_max) != n_max or n_max < 1:
        raise InvalidArgument(f"n_max must be a positive integer, got {n_max!r}")
    a = np.diag(np.sqrt(np.arange(1, int(n_max) + 1)), 1).astype(complex)
    return BosonOperators(a, a.T.copy())


def dagger(A: np.ndarray) -> np.ndarray:
    return _check_square(A).conj().T


def tensor(*ops: np.ndarray) -> np.ndarray:
    """Kronecker product, leftmost factor slowest."""
    if not ops:
        raise InvalidArgument("tensor needs at least one operator")
    out = _check_square(ops[0])
    for op in ops[1:]:
        out = np.kron(out, _check_square(op))
    return out


def _check_pair(A, B):
    A, B = _check_square(A), _check_square(B)
    if A.shape != B.shape:
        raise InvalidArgument(f"dimension mismatch: {A.shape} vs {B.shape}")
    return A, B


def commutator(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    A, B = _check_pair(A, B)
    return A @ B - B @ A


def anticommutator(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    A, B = _check_pair(A, B)
    return A @ B + B @ A


def expectation(O: np.ndarray, rho: np.ndarray) -> complex:
    """``Tr[O rho]``."""
    O, rho = _check_pair(O, rho)
    # Tr[O rho] = sum_ij O_ij rho_ji without forming the product
    return complex(np.einsum("ij,ji->", O, rho))


def is_hermitian(A: np.ndarray, tol: float = HERMITIAN_TOL) -> bool:
    A = _check_square(A)
    return bool(np.max(np.abs(A - A.conj().T), initial=0.0) < tol)


def check_density_matrix(rho: np.ndarray, tol: float = 1e-9, pos_tol: float = 1e-8) -> np.ndarray:
    """Validate a density matrix and return it as a complex array.

    Raises :class:`InvalidArgument` if the trace, hermiticity or positivity
    checks fail.
    """
    rho = np.asarray(_check_square(rho, "density matrix"), dtype=complex)
    tr = np.trace(rho)
    if abs(tr - 1.0) > tol:
        raise InvalidArgument(f"density matrix trace {tr} differs from 1")
    if not is_hermitian(rho, tol):
        raise InvalidArgument("density matrix is not Hermitian")
    lmin = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min()
    if lmin < -pos_tol:
        raise InvalidArgument(f"density matrix has negative eigenvalue {lmin:.3e}")
    return rho


def ket_to_dm(psi: np.ndarray) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex).ravel()
    psi = psi / np.linalg.norm(psi)
    return np.outer(psi, psi.conj())


def spin_basis_state(n_atoms: int, m: float) -> np.ndarray:
    """Ket ``|m>`` of the symmetric subspace."""
    idx = m + n_atoms / 2
    if idx != int(idx) or not 0 <= idx <= n_atoms:
        raise InvalidArgument(f"m={m} is not a valid level for N={n_atoms}")
    psi = np.zeros(n_atoms + 1, dtype=complex)
    psi[int(idx)] = 1.0
    return psi


def noon_state(n_atoms: int) -> np.ndarray:
    """``(|N/2> + |-N/2>)/sqrt(2)``."""
    psi = spin_basis_state(n_atoms, n_atoms / 2) + spin_basis_state(n_atoms, -n_atoms / 2)
    return psi / np.sqrt(2)


def partial_trace(rho: np.ndarray, dims: tuple[int, int], keep: int) -> np.ndarray:
    """Reduce a bipartite operator on ``dims[0] (x) dims[1]`` to factor ``keep``."""
    d0, d1 = dims
    r = np.asarray(rho).reshape(d0, d1, d0, d1)
    if keep == 0:
        return np.einsum("ijkj->ik", r)
    if keep == 1:
        return np.einsum("ijil->jl", r)
    raise InvalidArgument("keep must be 0 or 1")


def trace_distance(rho: np.ndarray, sigma: np.ndarray) -> float:
    rho, sigma = _check_pair(rho, sigma)
    diff = rho - sigma
    return 0.5 * float(np.abs(np.linalg.eigvalsh(0.5 * (diff + diff.conj().T))).sum())
