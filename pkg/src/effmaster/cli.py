"""Command-line front end.

Each subcommand reads one JSON config, validates it against a fixed set of
keys, runs the computation and writes CSV (plus JSON where noted).  Every
CSV starts with a comment line holding the package version and the fully
resolved config, so an output file documents how it was produced.

Exit codes: 0 success, 2 bad config, 3 resource limit, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import dicke, meanfield, semiclassical
from .errors import EffMasterError, InvalidArgument, ResourceLimit
from .liouvillian import (
    DEFAULT_SPECTRUM_GUARD,
    build_liouvillian,
    sort_order,
    spectrum,
    write_spectrum_csv,
)

log = logging.getLogger("effmaster")

EXIT_OK, EXIT_CONFIG, EXIT_RESOURCE, EXIT_NUMERICAL = 0, 2, 3, 4
LARGE_SPECTRUM_GUARD = 50000


class ConfigError(Exception):
    pass


# ----------------------------------------------------------------- config schema

_NUM = (int, float)
PARAM_KEYS = {"n_atoms": int, "omega0": _NUM, "omega_c": _NUM, "kappa": _NUM,
              "g": _NUM, "g_over_gc": _NUM}

# key -> (accepted types, default); a default of ... marks a required key
SCHEMAS = {
    "spectrum": {
        "params": (dict, ...), "method": (str, "effective"), "mode": (str, "exact"),
        "n_max": ((int, type(None)), None), "max_dim": ((int, type(None)), None),
    },
    "sweep": {
        "params": (dict, ...), "g_over_gc": (list, ...), "method": (str, "effective"),
        "n_max": ((int, type(None)), None),
    },
    "evolve": {
        "params": (dict, ...), "initial": ((str, list), "spin_down"), "t_final": (_NUM, ...),
        "dt": (_NUM, 1e-2), "sample_interval": ((*_NUM, type(None)), None),
        "method": (str, "effective"), "mode": (str, "exact"),
        "n_max": ((int, type(None)), None),
    },
    "trajectories": {
        "params": (dict, ...), "n_traj": (int, ...), "t_final": (_NUM, ...),
        "dt": (_NUM, 1e-3), "sample_interval": ((*_NUM, type(None)), None),
        "sampler": (str, "z_polarized"), "field_start": (str, "vacuum"),
    },
    "meanfield": {
        "params": (dict, ...), "side": (str, "below"), "dissipative": (bool, True),
        "window": ((list, type(None)), None), "n_points": (int, 12),
    },
    "compare": {
        "params": (dict, ...), "mode": (str, "exact"), "n_max": ((int, type(None)), None),
        "max_dim": (int, 6000), "slow_cutoff": (_NUM, -0.5),
    },
}
COMMON = {"seed": (int, 0), "threads": (int, 1), "out": ((str, type(None)), None)}


def _check_type(key, value, types):
    if isinstance(value, bool) and bool not in (types if isinstance(types, tuple) else (types,)):
        raise ConfigError(f"{key}: expected {types}, got a boolean")
    if not isinstance(value, types):
        raise ConfigError(f"{key}: expected {types}, got {type(value).__name__}")


def resolve_config(command: str, raw: dict) -> dict:
    """Fill defaults and reject unknown or mistyped keys."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    schema = {**SCHEMAS[command], **COMMON}
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigError(f"unknown config keys for {command}: {unknown}")
    out = {}
    for key, (types, default) in schema.items():
        if key in raw:
            _check_type(key, raw[key], types)
            out[key] = raw[key]
        elif default is ...:
            raise ConfigError(f"missing required key {key!r}")
        else:
            out[key] = default
    params = out["params"]
    bad = sorted(set(params) - set(PARAM_KEYS))
    if bad:
        raise ConfigError(f"unknown params keys: {bad}")
    for key, value in params.items():
        _check_type(f"params.{key}", value, PARAM_KEYS[key])
    if "n_atoms" not in params:
        raise ConfigError("params.n_atoms is required")
    if "g" in params and "g_over_gc" in params:
        raise ConfigError("give either params.g or params.g_over_gc, not both")
    if not 0 <= out["seed"] < 2 ** 64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    if out["threads"] < 1:
        raise ConfigError("threads must be positive")
    return out


def build_params(cfg: dict) -> dicke.DickeParams:
    raw = dict(cfg["params"])
    ratio = raw.pop("g_over_gc", None)
    p = dicke.DickeParams(**raw)
    return p.at(ratio) if ratio is not None else p


def _header(command: str, cfg: dict) -> str:
    return f"effmaster {__version__} {json.dumps({'command': command, **cfg}, sort_keys=True)}"


def _write_json(doc: dict, path: Path) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _sidecar(out: Path) -> Path:
    return out.with_suffix(".json")


# ---------------------------------------------------------------------- commands


def _spectrum_guard(cfg: dict, large: bool) -> int:
    if cfg["max_dim"] is not None:
        return cfg["max_dim"]
    return LARGE_SPECTRUM_GUARD if large else DEFAULT_SPECTRUM_GUARD


def _full_cutoff(p: dicke.DickeParams, n_max: int | None, guard: int) -> int:
    """Given cutoff, or the adaptive one reduced until ``d^2`` fits the guard."""
    if n_max is not None:
        return n_max
    n = dicke.full_steady_state(p).n_max
    while n > 1 and ((p.n_atoms + 1) * (n + 1)) ** 2 > guard:
        n -= 1
    return n


def _spectrum_summary(eigs: np.ndarray) -> dict:
    re = np.sort(eigs.real)[::-1]
    return {
        "n_eigenvalues": int(len(eigs)),
        "max_re": float(re[0]),
        "spectral_gap": float(-re[1]) if len(re) > 1 else float("nan"),
    }


def cmd_spectrum(cfg: dict, out: Path, large: bool = False) -> None:
    p = build_params(cfg)
    guard = _spectrum_guard(cfg, large)
    if cfg["method"] == "effective":
        model = dicke.effective_model(p, cfg["mode"])
    elif cfg["method"] == "full":
        model = dicke.full_model(p, _full_cutoff(p, cfg["n_max"], guard))
    else:
        raise InvalidArgument(f"unknown spectrum method {cfg['method']!r}")
    if model.dim ** 2 > guard:
        raise ResourceLimit(f"superoperator dimension {model.dim ** 2} exceeds the guard {guard};"
                            " lower n_max or pass --large")
    spect = spectrum(build_liouvillian(model, sparse=True), max_dim=guard)
    write_spectrum_csv(spect, out, _header("spectrum", cfg))
    _write_json(_spectrum_summary(spect.eigenvalues), _sidecar(out))


def cmd_sweep(cfg: dict, out: Path, large: bool = False) -> None:
    p = build_params(cfg)
    ratios = cfg["g_over_gc"]
    if not ratios or not all(isinstance(r, _NUM) and not isinstance(r, bool) for r in ratios):
        raise InvalidArgument("g_over_gc must be a nonempty list of numbers")
    rows = dicke.steady_state_sweep(p, [r * p.gc for r in ratios], cfg["method"], cfg["n_max"])
    dicke.write_sweep_csv(rows, out, _header("sweep", cfg))
    failed = [r["g_over_gc"] for r in rows if not r["ok"]]
    if failed:
        log.warning("sweep points failed: %s", failed)


def cmd_evolve(cfg: dict, out: Path, large: bool = False) -> None:
    p = build_params(cfg)
    rho0 = dicke.initial_spin_state(p.n_atoms, cfg["initial"])
    series = dicke.evolve_observables(p, rho0, cfg["t_final"], cfg["dt"], cfg["sample_interval"],
                                      cfg["method"], cfg["mode"], cfg["n_max"])
    dicke.write_evolve_csv(series, out, _header("evolve", cfg))


def cmd_trajectories(cfg: dict, out: Path, large: bool = False) -> None:
    p = build_params(cfg)
    ens = semiclassical.EnsembleConfig(
        n_traj=cfg["n_traj"], t_final=cfg["t_final"], dt=cfg["dt"], seed=cfg["seed"],
        sampler=cfg["sampler"], field_start=cfg["field_start"],
        sample_interval=cfg["sample_interval"], threads=cfg["threads"])
    res = semiclassical.run_ensemble(p, ens)
    semiclassical.write_ensemble_csv(res, out, _header("trajectories", cfg))


def cmd_meanfield(cfg: dict, out: Path, large: bool = False) -> None:
    p = build_params(cfg)
    window = cfg["window"]
    if window is not None:
        if len(window) != 2:
            raise InvalidArgument("window must be [low, high]")
        window = (float(window[0]), float(window[1]))
    fit = meanfield.critical_exponent_fit(p, cfg["side"], cfg["dissipative"], window,
                                          cfg["n_points"])
    meanfield.write_exponent_csv(fit, out, _header("meanfield", cfg))
    meanfield.write_exponent_json(fit, _sidecar(out))


def compare_report(p: dicke.DickeParams, mode: str = "exact", n_max: int | None = None,
                   max_dim: int = 6000, slow_cutoff: float = -0.5) -> dict:
    """Full versus effective model: slow spectra, steady-state observables and ``epsilon``."""
    fields = dicke.effective_fields(p, mode)
    eff_model = dicke.effective_model(p, mode)
    cutoff = _full_cutoff(p, n_max, max_dim)
    full = dicke.full_model(p, cutoff)
    if full.dim ** 2 > max_dim:
        raise ResourceLimit(f"full superoperator dimension {full.dim ** 2} exceeds {max_dim}")

    eff_eigs = spectrum(build_liouvillian(eff_model)).eigenvalues
    full_eigs = spectrum(build_liouvillian(full, sparse=True), max_dim=max_dim).eigenvalues
    slow = eff_eigs[eff_eigs.real > slow_cutoff]
    slow = slow[sort_order(slow)]
    matches = []
    for lam in slow:
        k = int(np.argmin(np.abs(full_eigs - lam)))
        matches.append({"effective": [float(lam.real), float(lam.imag)],
                        "full": [float(full_eigs[k].real), float(full_eigs[k].imag)],
                        "distance": float(abs(full_eigs[k] - lam))})

    rho_eff = dicke.effective_steady_state(p, mode)
    eff_obs = {"photon_number": dicke.photon_number(rho_eff, fields),
               "sz": dicke.observables(rho_eff)["sz"]}
    rho_full = dicke.full_steady_state_at(p, cutoff)
    full_obs = dicke.full_observables(rho_full, p, cutoff)
    return {
        "n_atoms": p.n_atoms,
        "g_over_gc": p.g / p.gc,
        "n_max": cutoff,
        "epsilon": fields.epsilon,
        "slow_cutoff": slow_cutoff,
        "slow_eigenvalues": matches,
        "max_slow_distance": max((m["distance"] for m in matches), default=0.0),
        "steady_state": {
            "effective": eff_obs,
            "full": {"photon_number": full_obs["photon_number"], "sz": full_obs["sz"]},
            "delta_photon_number": full_obs["photon_number"] - eff_obs["photon_number"],
            "delta_sz": full_obs["sz"] - eff_obs["sz"],
        },
    }


def cmd_compare(cfg: dict, out: Path, large: bool = False) -> None:
    p = build_params(cfg)
    report = compare_report(p, cfg["mode"], cfg["n_max"], cfg["max_dim"], cfg["slow_cutoff"])
    report["config"] = {"command": "compare", **cfg}
    report["version"] = __version__
    _write_json(report, out)


COMMANDS = {
    "spectrum": cmd_spectrum,
    "sweep": cmd_sweep,
    "evolve": cmd_evolve,
    "trajectories": cmd_trajectories,
    "meanfield": cmd_meanfield,
    "compare": cmd_compare,
}


# -------------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="effmaster", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"effmaster {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="JSON experiment config")
        sp.add_argument("--out", help="output path (overrides the config)")
        sp.add_argument("--seed", type=int, help="random seed (overrides the config)")
        sp.add_argument("--threads", type=int, help="worker threads (overrides the config)")
        sp.add_argument("--large", action="store_true",
                        help="raise the dense spectrum guard for large runs")
        sp.add_argument("-v", "--verbose", action="store_true")
    return ap


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        try:
            raw = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        for flag in ("out", "seed", "threads"):
            value = getattr(args, flag)
            if value is not None:
                raw[flag] = value
        cfg = resolve_config(args.command, raw)
        if cfg["out"] is None:
            raise ConfigError("no output path: set 'out' in the config or pass --out")
        out = Path(cfg["out"])
        out.parent.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](cfg, out, args.large)
    except (ConfigError, InvalidArgument) as exc:
        print(f"effmaster: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ResourceLimit as exc:
        print(f"effmaster: resource limit: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except EffMasterError as exc:
        print(f"effmaster: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    return run(argv)
