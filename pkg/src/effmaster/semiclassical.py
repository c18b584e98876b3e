"""Stochastic c-number trajectories for the coupled atom-cavity system.

Operators are replaced by symmetrically ordered c-numbers: cavity
quadratures ``x = a + a^+``, ``p = i(a^+ - a)`` and the three spin
components.  Vacuum input noise enters the quadratures with strength
``sqrt(2 kappa)``, which gives unit stationary variance for an empty cavity.

Trajectories are grouped in fixed chunks.  Each chunk owns a generator
spawned from ``(seed, chunk index)`` and always draws noise for the full
chunk width, so trajectory ``i`` does not depend on ``n_traj`` or on the
order in which chunks are processed.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .dicke import DickeParams, alpha_coefficients
from .errors import EnsembleFailure, InvalidArgument, TrajectoryAbort

log = logging.getLogger(__name__)

CHUNK = 1024
NOISE_BLOCK = 256
STEP_GUARD = 0.1
MAX_ABORT_FRACTION = 0.01
SAMPLERS = ("z_polarized", "noon")
FIELD_STARTS = ("vacuum", "slaved")

ENSEMBLE_HEADER = ["t", "mean_sx2", "stderr_sx2", "mean_sz", "stderr_sz",
                   "mean_photon", "stderr_photon"]


class TrajectoryState(NamedTuple):
    """One trajectory, or a batch when the fields are arrays."""
    x: float | np.ndarray
    p: float | np.ndarray
    sx: float | np.ndarray
    sy: float | np.ndarray
    sz: float | np.ndarray


@dataclass(frozen=True)
class EnsembleConfig:
    n_traj: int
    t_final: float
    dt: float = 1e-3
    seed: int = 0
    sampler: str = "z_polarized"
    field_start: str = "vacuum"
    sample_interval: float | None = None
    threads: int = 1

    def __post_init__(self):
        if int(self.n_traj) != self.n_traj or self.n_traj < 1:
            raise InvalidArgument("n_traj must be a positive integer")
        if not self.dt > 0 or not self.t_final > 0:
            raise InvalidArgument("dt and t_final must be positive")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise InvalidArgument("seed must be an unsigned 64-bit integer")
        if self.sampler not in SAMPLERS:
            raise InvalidArgument(f"sampler must be one of {SAMPLERS}")
        if self.field_start not in FIELD_STARTS:
            raise InvalidArgument(f"field_start must be one of {FIELD_STARTS}")
        if self.sample_interval is not None and not self.sample_interval > 0:
            raise InvalidArgument("sample_interval must be positive")
        if int(self.threads) < 1:
            raise InvalidArgument("threads must be at least 1")

    def check(self, p: DickeParams) -> None:
        fastest = max(p.omega_c, p.omega0, p.kappa, p.g * math.sqrt(p.n_atoms))
        if not self.dt * fastest < STEP_GUARD:
            raise InvalidArgument(
                f"dt={self.dt} too large: dt * {fastest:.3g} must stay below {STEP_GUARD}")


def sde_step(s: TrajectoryState, p: DickeParams, dt: float, noise, *,
             kappa: float | None = None, check: bool = True) -> TrajectoryState:
    """One Euler-Maruyama step; the drift is evaluated at the pre-step state.

    ``noise`` holds the standard normals ``(eta_x, eta_p)``.  ``kappa``
    overrides the cavity loss (used to switch damping off in checks).
    """
    k = p.kappa if kappa is None else kappa
    eta_x, eta_p = noise
    c = 2 * p.g / math.sqrt(p.n_atoms)
    amp = math.sqrt(2 * k * dt)
    x, q, sx, sy, sz = s
    out = TrajectoryState(
        x + dt * (-k * x + p.omega_c * q) + amp * eta_x,
        q + dt * (-k * q - p.omega_c * x - 2 * c * sx) + amp * eta_p,
        sx - dt * p.omega0 * sy,
        sy + dt * (p.omega0 * sx - c * x * sz),
        sz + dt * c * x * sy,
    )
    if check and not all(np.all(np.isfinite(v)) for v in out):
        raise TrajectoryAbort(f"non-finite trajectory state after step: {out}")
    return out


def sample_initial(sampler: str, n_atoms: int, rng: np.random.Generator,
                   size: int | None = None,
                   slaved: tuple[complex, complex] | None = None) -> TrajectoryState:
    """Draw initial c-numbers.

    Both samplers put the transverse spin components at variance ``N/4``
    (the quantum value of ``<Sx^2>`` in a fully polarized state) and the
    quadratures at the vacuum variance 1.  ``noon`` picks ``Sz = +-N/2``
    with equal probability.

    ``slaved = (alpha_+, alpha_-)`` shifts the cavity by the c-number field
    ``alpha_+ S+ + alpha_- S-`` of each sample, i.e. starts the cavity in
    the state it would reach by following the spin adiabatically.
    """
    if int(n_atoms) != n_atoms or n_atoms < 1:
        raise InvalidArgument("n_atoms must be a positive integer")
    if sampler not in SAMPLERS:
        raise InvalidArgument(f"sampler must be one of {SAMPLERS}")
    shape = () if size is None else (size,)
    half = n_atoms / 2
    # draw in a fixed order so both samplers consume the stream identically
    x = rng.standard_normal(shape)
    q = rng.standard_normal(shape)
    sx = math.sqrt(n_atoms / 4) * rng.standard_normal(shape)
    sy = math.sqrt(n_atoms / 4) * rng.standard_normal(shape)
    flip = rng.random(shape)
    if sampler == "z_polarized":
        sz = np.full(shape, -half)
    else:
        sz = np.where(flip < 0.5, half, -half)
    if slaved is not None:
        field = slaved[0] * (sx + 1j * sy) + slaved[1] * (sx - 1j * sy)
        x = x + 2 * field.real
        q = q + 2 * field.imag
    if size is None:
        return TrajectoryState(float(x), float(q), float(sx), float(sy), float(sz))
    return TrajectoryState(x, q, sx, sy, sz)


@dataclass
class EnsembleResult:
    times: np.ndarray
    mean_sx2: np.ndarray
    stderr_sx2: np.ndarray
    mean_sz: np.ndarray
    stderr_sz: np.ndarray
    mean_photon: np.ndarray
    stderr_photon: np.ndarray
    n_used: int
    n_aborted: int


def _chunk_rng(seed: int, chunk: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(chunk,))))


def _sample_grid(cfg: EnsembleConfig) -> tuple[int, int]:
    interval = cfg.sample_interval if cfg.sample_interval is not None else cfg.t_final / 200
    n_sub = max(1, math.ceil(interval / cfg.dt - 1e-9))
    n_samples = int(round(cfg.t_final / interval))
    if n_samples < 1:
        raise InvalidArgument("sample_interval longer than t_final")
    return n_sub, n_samples


def _run_chunk(p: DickeParams, cfg: EnsembleConfig, chunk: int, n_sub: int, n_samples: int,
               h: float):
    """Observables at every sample time for one chunk, shape ``(3, n_samples+1, CHUNK)``."""
    rng = _chunk_rng(cfg.seed, chunk)
    slaved = alpha_coefficients(p) if cfg.field_start == "slaved" else None
    s = sample_initial(cfg.sampler, p.n_atoms, rng, CHUNK, slaved)
    out = np.empty((3, n_samples + 1, CHUNK))

    def record(k, s):
        out[0, k] = s.sx * s.sx
        out[1, k] = s.sz
        out[2, k] = (s.x * s.x + s.p * s.p - 2) / 4

    record(0, s)
    total = n_sub * n_samples
    noise = None
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(total):
            j = step % NOISE_BLOCK
            if j == 0:
                noise = rng.standard_normal((NOISE_BLOCK, 2, CHUNK))
            s = sde_step(s, p, h, noise[j], check=False)
            if (step + 1) % n_sub == 0:
                record((step + 1) // n_sub, s)
    return out


def run_ensemble(p: DickeParams, cfg: EnsembleConfig) -> EnsembleResult:
    """Ensemble means and standard errors of ``Sx^2``, ``Sz`` and the photon number.

    Trajectories that turn non-finite are dropped; more than 1% of them
    raises :class:`EnsembleFailure`.
    """
    cfg.check(p)
    n_sub, n_samples = _sample_grid(cfg)
    interval = cfg.t_final / n_samples
    h = interval / n_sub
    n_chunks = -(-cfg.n_traj // CHUNK)

    def work(c):
        data = _run_chunk(p, cfg, c, n_sub, n_samples, h)
        width = min(CHUNK, cfg.n_traj - c * CHUNK)
        data = data[:, :, :width]
        ok = np.all(np.isfinite(data), axis=(0, 1))
        kept = data[:, :, ok]
        return kept.sum(axis=2), (kept * kept).sum(axis=2), int(ok.sum()), int(width - ok.sum())

    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as pool:
            parts = list(pool.map(work, range(n_chunks)))
    else:
        parts = [work(c) for c in range(n_chunks)]

    # reduce in chunk order so the result does not depend on scheduling
    s1 = np.zeros((3, n_samples + 1))
    s2 = np.zeros((3, n_samples + 1))
    used = aborted = 0
    for a, b, u, ab in parts:
        s1 += a
        s2 += b
        used += u
        aborted += ab
    if aborted > MAX_ABORT_FRACTION * cfg.n_traj:
        raise EnsembleFailure(f"{aborted} of {cfg.n_traj} trajectories diverged")
    if aborted:
        log.warning("%d trajectories diverged and were dropped", aborted)
    if used == 0:
        raise EnsembleFailure("no finite trajectories")
    mean = s1 / used
    if used > 1:
        var = np.maximum(s2 - used * mean * mean, 0.0) / (used - 1)
        err = np.sqrt(var / used)
    else:
        err = np.full_like(mean, np.nan)
    times = interval * np.arange(n_samples + 1)
    return EnsembleResult(times, mean[0], err[0], mean[1], err[1], mean[2], err[2], used, aborted)


def write_ensemble_csv(res: EnsembleResult, path: str | Path, comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh)
        w.writerow(ENSEMBLE_HEADER)
        cols = (res.times, res.mean_sx2, res.stderr_sx2, res.mean_sz, res.stderr_sz,
                res.mean_photon, res.stderr_photon)
        for row in zip(*cols):
            w.writerow([repr(float(v)) for v in row])
