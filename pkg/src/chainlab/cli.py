"""Batch experiment driver.

Usage: ``chainlab <subcommand> --config <path> [--seed S] [--out DIR]``.

Configs are flat ``key = value`` files with dotted section prefixes (see
docs/config_schema.md).  Validation happens before any computation and
reports every violated constraint at once; unknown keys are rejected.
Identical config and seed produce byte-identical outputs: replicas derive
their noise streams from a counter scheme keyed on (seed, replica, step),
so growing the replica count never perturbs existing replicas.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np
from scipy.optimize import curve_fit

from . import micro
from .dynamics import SCHEMES, SimConfig, run_ensemble
from .euler import LinearizedSystem, predicted_mode_covariance
from .fluctuation import (BRANCHES, Mode, autocorrelation, field,
                          mode_profile, bg_residual_variance)
from .potential import VALID_KINDS, PotentialSpec
from .thermo import CanonicalParams

# --- config schema -----------------------------------------------------------

_POTENTIAL = {
    "potential.kind": ("str", True, None),
    "potential.a": ("float", False, 0.0),
}
_THERMO_KEYS = {**_POTENTIAL,
                "beta": ("float", True, None),
                "tau": ("float", True, None)}
_SIM_KEYS = {**_THERMO_KEYS,
             "gamma": ("float", False, 1.0),
             "n": ("int", True, None),
             "times": ("float_list", True, None),
             "replicas": ("int", True, None),
             "scheme": ("str", False, "strang-circle"),
             "periodic": ("bool", False, False),
             "h_micro": ("float", False, None),
             "seed": ("int", False, 0)}

SCHEMAS = {
    "thermo": _THERMO_KEYS,
    "simulate": _SIM_KEYS,
    "modes": {**_SIM_KEYS, "modes": ("mode_list", True, None)},
    "euler": {**_THERMO_KEYS,
              "times": ("float_list", True, None),
              "n_modes": ("int_list", False, [0])},
    "gap": {**_THERMO_KEYS,
            "k_list": ("int_list", True, None),
            "n_chains": ("int", False, 16),
            "n_records": ("int", False, 2500),
            "seed": ("int", False, 0)},
    "ensembles": {**_THERMO_KEYS,
                  "n_list": ("int_list", True, None),
                  "observable": ("str", False, "p1^4"),
                  "samples": ("int", False, 4000),
                  "seed": ("int", False, 0)},
    "bg-residual": {**_THERMO_KEYS,
                    "gamma": ("float", False, 1.0),
                    "n_list": ("int_list", True, None),
                    "t_final": ("float", False, 0.5),
                    "replicas": ("int", True, None),
                    "scheme": ("str", False, "strang-circle"),
                    "seed": ("int", False, 0)},
}

_OBSERVABLES = ("p1^2", "p1^4")


class ConfigError(ValueError):
    """Raised with the full list of config violations."""


def _parse_value(kind: str, raw: str, key: str, errors: list):
    try:
        if kind == "str":
            return raw
        if kind == "float":
            return float(raw)
        if kind == "int":
            return int(raw)
        if kind == "bool":
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if kind == "float_list":
            return [float(v) for v in raw.split(",") if v.strip()]
        if kind == "int_list":
            return [int(v) for v in raw.split(",") if v.strip()]
        if kind == "mode_list":
            out = []
            for item in raw.split(","):
                branch, _, idx = item.strip().partition(":")
                if branch not in BRANCHES:
                    raise ValueError(f"unknown branch {branch!r}")
                out.append(Mode(branch, int(idx)))
            return out
    except ValueError as exc:
        errors.append(f"key {key!r}: cannot parse {raw!r} as {kind} ({exc})")
        return None
    raise AssertionError(f"unknown schema type {kind}")


def parse_config(path: Path) -> dict:
    """Read a flat dotted key = value file into a raw string mapping."""
    raw = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', "
                              f"got {stripped!r}")
        key, _, val = stripped.partition("=")
        raw[key.strip()] = val.strip()
    return raw


def validate_config(subcommand: str, raw: dict) -> dict:
    """Type-check against the subcommand schema, reporting all violations."""
    schema = SCHEMAS[subcommand]
    errors = []
    cfg = {}
    for key in raw:
        if key not in schema:
            errors.append(f"unknown key {key!r} for subcommand "
                          f"{subcommand!r}")
    for key, (kind, required, default) in schema.items():
        if key in raw:
            cfg[key] = _parse_value(kind, raw[key], key, errors)
        elif required:
            errors.append(f"missing required key {key!r}")
        else:
            cfg[key] = default
    errors.extend(_semantic_errors(subcommand, cfg))
    if errors:
        raise ConfigError("invalid config:\n  " + "\n  ".join(errors))
    return cfg


def _semantic_errors(subcommand: str, cfg: dict) -> list:
    # runs even in the presence of parse errors (whose keys hold None), so
    # one failed run reports everything wrong with the config at once
    errors = []
    kind = cfg.get("potential.kind")
    if kind is not None and kind not in VALID_KINDS:
        errors.append(f"potential.kind {kind!r} must be one of "
                      f"{VALID_KINDS}")
    elif kind == "harmonic" and cfg.get("potential.a") not in (None, 0.0):
        errors.append("potential.a must be 0 for the harmonic kind")
    if cfg.get("beta") is not None and cfg["beta"] <= 0:
        errors.append("beta must be positive")
    if cfg.get("gamma") is not None and cfg["gamma"] < 0:
        errors.append("gamma must be nonnegative")
    if cfg.get("scheme") not in (None,) + SCHEMES:
        errors.append(f"scheme must be one of {SCHEMES}")
    if cfg.get("times") is not None:
        t = cfg["times"]
        if not t or any(b <= a for a, b in zip(t, t[1:])) or t[0] < 0:
            errors.append("times must be nonnegative, strictly increasing")
    if subcommand == "ensembles" and cfg.get("observable") not in _OBSERVABLES:
        errors.append(f"observable must be one of {_OBSERVABLES}")
    if subcommand == "ensembles" and kind not in (None, "harmonic"):
        errors.append("ensembles currently requires the harmonic potential "
                      "(exact conditional oracle)")
    for key in ("n", "replicas", "samples", "n_chains", "n_records"):
        if cfg.get(key) is not None and cfg[key] <= 0:
            errors.append(f"{key} must be positive")
    for key in ("k_list", "n_list"):
        if cfg.get(key) is not None and any(v < 2 for v in cfg[key]):
            errors.append(f"all {key} entries must be >= 2")
    return errors


def _spec(cfg: dict) -> PotentialSpec:
    return PotentialSpec(cfg["potential.kind"], cfg["potential.a"])


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, header: str, rows):
    with path.open("w") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(str(v) if isinstance(v, (int, str)) else _fmt(v)
                              for v in row) + "\n")


# --- subcommand runners --------------------------------------------------------

def _run_thermo(cfg: dict, outdir: Path) -> dict:
    params = CanonicalParams.compute(_spec(cfg), cfg["beta"], cfg["tau"])
    summary = {
        "G": params.G, "r_bar": params.r_bar, "e_bar": params.e_bar,
        "tau_r": params.tau_r, "tau_e": params.tau_e, "c": params.c,
        "Sigma": params.Sigma.tolist(), "R": params.R.tolist(),
        "Q": params.Q.tolist(),
    }
    _write_json(outdir / "thermo.json", summary)
    return summary


def _sim_config(cfg: dict) -> SimConfig:
    return SimConfig(_spec(cfg), cfg["n"], cfg["beta"], cfg["tau"],
                     gamma=cfg["gamma"], periodic=cfg["periodic"],
                     scheme=cfg["scheme"], h_micro=cfg["h_micro"],
                     seed=cfg["seed"])


def _run_simulate(cfg: dict, outdir: Path) -> dict:
    sim = _sim_config(cfg)
    params = CanonicalParams.compute(sim.spec, sim.beta, sim.tau)
    snaps = run_ensemble(sim, cfg["times"], cfg["replicas"])
    rows = []
    for j, t in enumerate(cfg["times"]):
        for rep in range(cfg["replicas"]):
            for i in range(sim.n_sites):
                p, r, e = snaps[j, rep, i]
                rows.append((_fmt(t), rep, i + 1, p, r, e))
    _write_csv(outdir / "trajectory.csv", "t,replica,site,p,r,e", rows)
    final = snaps[-1].reshape(-1, 3)
    emp_cov = np.cov(final.T, ddof=1)
    summary = {
        "final_time": cfg["times"][-1],
        "empirical_mean": final.mean(axis=0).tolist(),
        "empirical_cov": emp_cov.tolist(),
        "predicted_mean": [0.0, params.r_bar, params.e_bar],
        "predicted_cov": params.Sigma.tolist(),
    }
    _write_json(outdir / "summary.json", summary)
    return summary


def _fit_frequency(lags, corr):
    """Least-squares cosine fit C(t) = A cos(ω t); returns (A, ω) or None."""
    amp0 = corr[0]
    sign_change = np.nonzero(corr < 0)[0]
    w0 = math.pi / (2 * lags[sign_change[0]]) if sign_change.size \
        else math.pi / (2 * lags[-1])
    try:
        popt, _ = curve_fit(lambda t, a, w: a * np.cos(w * t), lags, corr,
                            p0=[amp0, w0], maxfev=10000)
        return float(popt[0]), abs(float(popt[1]))
    except RuntimeError:
        return None


def _run_modes(cfg: dict, outdir: Path) -> dict:
    from .fluctuation import mode_ensemble

    sim = _sim_config(cfg)
    params = CanonicalParams.compute(sim.spec, sim.beta, sim.tau)
    series = mode_ensemble(sim, params, cfg["modes"], cfg["times"],
                           cfg["replicas"])
    rows = []
    for s in series:
        for rep in range(s.values.shape[0]):
            for j, t in enumerate(s.times):
                rows.append((_fmt(t), s.mode.branch, s.mode.n, rep,
                             s.values[rep, j]))
    _write_csv(outdir / "modes.csv", "t,mode_branch,mode_n,replica,value",
               rows)
    summary = {}
    for s in series:
        key = f"{s.mode.branch}:{s.mode.n}"
        entry = {"variance": float(s.values[:, 0].var(ddof=1))}
        if s.times.size >= 4 and s.values.shape[0] >= 30:
            lags, corr, stderr = autocorrelation(s)
            entry["autocorr_stderr_mean"] = float(np.mean(stderr))
            fit = _fit_frequency(lags, corr)
            if fit is not None:
                entry["fit_amplitude"], entry["fit_frequency"] = fit
        summary[key] = entry
    _write_json(outdir / "summary.json", summary)
    return summary


def _run_euler(cfg: dict, outdir: Path) -> dict:
    params = CanonicalParams.compute(_spec(cfg), cfg["beta"], cfg["tau"])
    lsys = LinearizedSystem.from_params(params)
    pairs = [("sine", "sine"), ("cosine", "cosine"), ("sine", "cosine"),
             ("entropy-cosine", "entropy-cosine")]
    rows = []
    for n in cfg["n_modes"]:
        for ba, bb in pairs:
            for t in cfg["times"]:
                val = predicted_mode_covariance(lsys, ba, bb, n, t)
                rows.append((_fmt(t), f"{ba}/{bb}", n, val))
    _write_csv(outdir / "euler.csv", "t,branch_pair,n,value", rows)
    summary = {"c": params.c, "sound_frequencies": {
        str(n): params.c * Mode("sine", n).wavenumber
        for n in cfg["n_modes"]}}
    _write_json(outdir / "summary.json", summary)
    return summary


def _run_gap(cfg: dict, outdir: Path) -> dict:
    spec = _spec(cfg)
    params = CanonicalParams.compute(spec, cfg["beta"], cfg["tau"])
    w = [0.0, params.r_bar, params.e_bar]
    results = []
    for k in cfg["k_list"]:
        gap, err = micro.spectral_gap_estimate(
            spec, w, k, n_chains=cfg["n_chains"],
            n_records=cfg["n_records"], seed=cfg["seed"])
        results.append({"K": k, "estimate": gap, "stderr": err,
                        "scaled_by_K2": gap * k * k})
    _write_json(outdir / "gap.json", results)
    _write_json(outdir / "summary.json", {"gap": results})
    return {"gap": results}


def _run_ensembles(cfg: dict, outdir: Path) -> dict:
    beta = cfg["beta"]
    params = CanonicalParams.compute(_spec(cfg), beta, cfg["tau"])
    w = [0.0, params.r_bar, params.e_bar]
    order = 2 if cfg["observable"] == "p1^2" else 4
    canonical = (1.0 / beta) if order == 2 else 3.0 / beta ** 2
    results = []
    gaps = []
    for n in cfg["n_list"]:
        exact = micro.harmonic_moment_p1(w, n, order)
        gap = abs(exact - canonical)
        gaps.append(gap)
        results.append({"n": n, "micro": exact, "canonical": canonical,
                        "gap": gap, "stderr": 0.0})
    fit = micro.ensembles_gap_curve(cfg["n_list"], gaps)
    summary = {"points": results, "slope": fit["slope"],
               "slope_stderr": fit["slope_stderr"],
               "inconclusive": fit["inconclusive"],
               "observable": cfg["observable"]}
    _write_json(outdir / "ensembles.json", summary)
    _write_json(outdir / "summary.json", summary)
    return summary


def _run_bg(cfg: dict, outdir: Path) -> dict:
    spec = _spec(cfg)
    params = CanonicalParams.compute(spec, cfg["beta"], cfg["tau"])
    results = []
    for n in cfg["n_list"]:
        sim = SimConfig(spec, n, cfg["beta"], cfg["tau"], gamma=cfg["gamma"],
                        scheme=cfg["scheme"], seed=cfg["seed"])
        mode = Mode("sine", 0)
        x = np.arange(1, n) / n
        theta = mode.wavenumber
        dh = math.sqrt(2.0) * theta * np.cos(theta * x)
        coeff = np.outer(dh, params.R[:, 0])
        est, err = bg_residual_variance(sim, params, coeff, cfg["t_final"],
                                        cfg["replicas"])
        results.append({"n": n, "estimate": est, "stderr": err})
    summary = {"bg_residual": results, "t_final": cfg["t_final"]}
    _write_json(outdir / "bg.json", summary)
    _write_json(outdir / "summary.json", summary)
    return summary


_RUNNERS = {
    "thermo": _run_thermo,
    "simulate": _run_simulate,
    "modes": _run_modes,
    "euler": _run_euler,
    "gap": _run_gap,
    "ensembles": _run_ensembles,
    "bg-residual": _run_bg,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="chainlab",
        description="Experiment driver for the noisy oscillator chain lab.")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in _RUNNERS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--out", type=Path, default=Path("chainlab-out"))
    args = parser.parse_args(argv)
    try:
        raw = parse_config(args.config)
        cfg = validate_config(args.subcommand, raw)
    except (ConfigError, OSError) as exc:
        print(exc, file=sys.stderr)
        return 2
    if args.seed is not None:
        if "seed" not in SCHEMAS[args.subcommand]:
            print(f"subcommand {args.subcommand!r} takes no seed",
                  file=sys.stderr)
            return 2
        cfg["seed"] = args.seed
    args.out.mkdir(parents=True, exist_ok=True)
    _RUNNERS[args.subcommand](cfg, args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
