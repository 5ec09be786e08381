"""Command-line runner.

``pchaos [--config FILE] [--out DIR] SUBCOMMAND [--key value ...]``

Values are resolved in order: built-in defaults, then the YAML config file
(either flat keys or a mapping under the subcommand name), then flags. The
output root comes from ``--out``, else ``$PCHAOS_OUT``, else ``./runs``;
each run writes into ``<root>/<subcommand>-<config hash>``.

Exit codes: 0 success, 1 a model assertion failed, 2 invalid configuration.
"""
from __future__ import annotations

import argparse
import math
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from . import _kernels, averaging, boltzmann, circle, harness, kac, speciation
from .output import RunWriter, config_digest, output_root
from .rng import RNG_ALGORITHM, WrappedNoise, make_stream, noise_spectrum

EXIT_OK, EXIT_ASSERT, EXIT_CONFIG = 0, 1, 2
REQUIRED = object()


class ConfigError(Exception):
    def __init__(self, errors):
        super().__init__("; ".join(errors))
        self.errors = list(errors)


class AssertionFailed(Exception):
    pass


# Schema -------------------------------------------------------------------------


@dataclass(frozen=True)
class Field:
    type: str  # int | float | str | bool | floats | ints | map | float_or_inf | float_or_none
    default: object
    help: str = ""
    check: object = None  # callable(value) -> error message or None
    choices: tuple = ()


def _pos(v):
    return None if v > 0 else "must be positive"


def _nonneg(v):
    return None if v >= 0 else "must be nonnegative"


def _min(m):
    return lambda v: None if v >= m else f"must be at least {m}"


def _width(v):
    return None if v > 0 else "width must be positive"


SCHEMAS = {
    "kac": {
        "N": Field("int", 100, "number of particles", _min(2)),
        "T": Field("float", 2.0, "time horizon", _pos),
        "snapshot-interval": Field("float", 0.5, "time between snapshots", _pos),
        "theta-law": Field("str", "uniform", "'uniform' or 'window:ALPHA'"),
        "law": Field("str", "uniform", "initial one-particle law", choices=kac.INITIAL_LAWS),
        "replicas": Field("int", 1, "independent replicas", _min(1)),
        "seed": Field("int", 0, "top-level seed", _nonneg),
        "log-events": Field("bool", False, "write the event log of replica 0"),
    },
    "circle": {
        "N": Field("int", 2000, "number of particles", _min(2)),
        "tau": Field("float", 1.2, "noise scale", _pos),
        "rho-family": Field("str", "gaussian", "base noise family", choices=("gaussian", "uniform")),
        "K": Field("int", 64, "Fourier truncation", _min(2)),
        "T": Field("float", 10.0, "time horizon", _pos),
        "dt": Field("float", 0.01, "spectral time step", lambda v: None if 0 < v <= 0.01 else "must lie in (0, 0.01]"),
        "b0": Field("float", 0.1, "initial a_1", lambda v: None if 0 <= v <= 0.5 else "must lie in [0, 0.5]"),
        "snapshots": Field("int", 21, "number of output times", _min(2)),
        "replicas": Field("int", 20, "independent replicas", _min(1)),
        "seed": Field("int", 0, "top-level seed", _nonneg),
    },
    "averaging": {
        "N": Field("int", 10000, "number of individuals", _min(2)),
        "g-family": Field("str", "gaussian", "noise family", choices=averaging.NOISE_FAMILIES),
        "scale": Field("float", 1.0, "noise scale parameter", _nonneg),
        "events": Field("int", 0, "replacements (0: 50 N)", _nonneg),
        "record-every": Field("int", 0, "replacements between records (0: N)", _nonneg),
        "Xi": Field("float", 5.0, "characteristic-function check range", _pos),
        "h": Field("float", 0.1, "characteristic-function check step", _pos),
        "seed": Field("int", 0, "top-level seed", _nonneg),
    },
    "boltzmann3": {
        "N": Field("int", 1000, "number of particles", _min(2)),
        "gamma-family": Field("str", "constant", "collision-rate family", choices=tuple(boltzmann.GAMMA_FAMILIES)),
        "gamma-params": Field("floats", [1.0], "family parameters"),
        "gamma-max": Field("float_or_none", None, "declared bound on gamma"),
        "b-family": Field("str", "isotropic", "angular law", choices=boltzmann.B_FAMILIES),
        "cos-min": Field("float", -1.0, "cap for the cutoff angular law"),
        "T": Field("float", 5.0, "time horizon", _pos),
        "snapshots": Field("int", 11, "number of output times", _min(2)),
        "seed": Field("int", 0, "top-level seed", _nonneg),
        "log-events": Field("bool", False, "write the candidate-event log"),
    },
    "speciation": {
        "food-locations": Field("floats", [-1.0, 1.0], "food atom positions"),
        "food-mass": Field("float", 200.0, "total food mass", _pos),
        "sigma-x": Field("float", 0.25, "competition width", _width),
        "sigma": Field("float_or_inf", 0.2, "mating choosiness ('inf': random mating)", _width),
        "mut-x": Field("float", 0.05, "mutation std of x", _nonneg),
        "mut-y": Field("float", 0.2, "mutation std of y", _nonneg),
        "mut-ystar": Field("float", 0.2, "mutation std of y*", _nonneg),
        "dim-y": Field("int", 1, "appearance dimension", _min(1)),
        "initial-x": Field("float", 0.0, "monomorphic starting x"),
        "initial-n": Field("int", 0, "starting size (0: food mass)", _nonneg),
        "generations": Field("int", 500, "generations", _min(1)),
        "bandwidth": Field("float", 0.2, "KDE bandwidth for mode counts", _pos),
        "cap": Field("int", speciation.DEFAULT_CAP, "population safety cap", _min(1)),
        "seed": Field("int", 0, "top-level seed", _nonneg),
    },
    "chaos-sweep": {
        "model": Field("str", REQUIRED, "model (required)", choices=harness.MODELS),
        "ns": Field("ints", [50, 100, 200, 400], "particle numbers"),
        "replicas": Field("int", 1000, "replicas per N", _min(2)),
        "T": Field("float", 2.0, "evaluation time", _nonneg),
        "params": Field("map", {}, "model parameters"),
        "expect-slope": Field("floats", [], "optional [lo, hi] bounds on the fitted slope"),
        "seed": Field("int", 0, "top-level seed", _nonneg),
    },
    "t1-check": {
        "N": Field("int", 8, "particles", _min(2)),
        "ell": Field("int", 2, "tensor order", lambda v: None if 1 <= v <= 3 else "must be 1, 2 or 3"),
        "configs": Field("int", 10000, "random configurations", _min(1)),
        "functions": Field("int", 20, "random test functions", _min(1)),
        "seed": Field("int", 0, "top-level seed", _nonneg),
    },
    "marginal-gap": {
        "model": Field("str", REQUIRED, "model (required)", choices=harness.MODELS),
        "ns": Field("ints", [50, 100, 200], "particle numbers"),
        "replicas": Field("int", 100, "replicas per N", _min(2)),
        "T": Field("float", 2.0, "time horizon", _nonneg),
        "snapshots": Field("int", 5, "snapshot intervals", _min(1)),
        "params": Field("map", {}, "model parameters"),
        "assert-decreasing": Field("bool", True, "fail unless the gap is non-increasing within 2 standard errors"),
        "seed": Field("int", 0, "top-level seed", _nonneg),
    },
}


def _coerce(ftype, value):
    if ftype == "int":
        if isinstance(value, bool) or not float(value).is_integer():
            raise ValueError("expected an integer")
        return int(value)
    if ftype == "float":
        if isinstance(value, bool):
            raise ValueError("expected a number")
        v = float(value)
        if not math.isfinite(v):
            raise ValueError("expected a finite number")
        return v
    if ftype == "float_or_inf":
        if isinstance(value, str) and value.lower() in ("inf", "infinity"):
            return math.inf
        return float(value)
    if ftype == "float_or_none":
        if value is None or (isinstance(value, str) and value.lower() in ("none", "null", "")):
            return None
        return float(value)
    if ftype == "str":
        if not isinstance(value, str):
            raise ValueError("expected a string")
        return value
    if ftype == "bool":
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "yes", "1", "false", "no", "0"):
            return value.lower() in ("true", "yes", "1")
        raise ValueError("expected true or false")
    if ftype in ("floats", "ints"):
        if isinstance(value, str):
            value = [v for v in value.replace(",", " ").split() if v]
        if not isinstance(value, (list, tuple)):
            raise ValueError("expected a list")
        return [_coerce("int" if ftype == "ints" else "float", v) for v in value]
    if ftype == "map":
        if isinstance(value, str):
            value = yaml.safe_load(value) or {}
        if not isinstance(value, dict):
            raise ValueError("expected a mapping")
        return dict(value)
    raise AssertionError(ftype)


def _normalise_key(k: str) -> str:
    return k.replace("_", "-")


def validate(subcommand: str, config: dict | None, source: str = "<config>"):
    """Resolve defaults and check every field. Returns the resolved dict or raises ConfigError."""
    if subcommand not in SCHEMAS:
        raise ConfigError([f"unknown subcommand {subcommand!r}"])
    schema = SCHEMAS[subcommand]
    config = dict(config or {})
    errors = []
    resolved = {}
    given = {_normalise_key(k): v for k, v in config.items()}
    for k in given:
        if k not in schema:
            errors.append(f"{source}: {subcommand}.{k}: unknown field")
    for k, f in schema.items():
        v = given.get(k, f.default)
        if v is REQUIRED:
            errors.append(f"{source}: {subcommand}.{k}: required field missing")
            continue
        try:
            v = _coerce(f.type, v) if v is not None or f.type == "float_or_none" else v
        except (ValueError, TypeError) as e:
            errors.append(f"{source}: {subcommand}.{k}: {e}")
            continue
        if f.choices and v not in f.choices:
            errors.append(f"{source}: {subcommand}.{k}: must be one of {list(f.choices)}")
            continue
        if f.check is not None and v is not None:
            msg = f.check(v)
            if msg:
                errors.append(f"{source}: {subcommand}.{k}: {msg}")
                continue
        resolved[k] = v
    if not errors:
        errors += _cross_checks(subcommand, resolved, source)
    if errors:
        raise ConfigError(errors)
    return resolved


GAMMA_PROBE = np.concatenate([np.linspace(0.0, 10.0, 1001), np.geomspace(10.0, 1e6, 200)])


def _cross_checks(sub, c, source):
    errs = []
    where = f"{source}: {sub}"
    if sub == "kac":
        try:
            kac.draw_theta(1, make_stream(0), _theta_law(c["theta-law"]))
        except (ValueError, IndexError) as e:
            errs.append(f"{where}.theta-law: {e}")
    if sub == "averaging" and c["g-family"] != "pointmass" and c["scale"] <= 0:
        errs.append(f"{where}.scale: must be positive")
    if sub == "boltzmann3":
        try:
            k = _kernel_from(c)
            # probe γ on a documented grid of relative speeds
            if np.any(k.gamma(GAMMA_PROBE) > k.gamma_max):
                errs.append(f"{where}.gamma-max: gamma exceeds gamma_max={k.gamma_max} on the probe grid (kernel contract)")
        except ValueError as e:
            errs.append(f"{where}.gamma-family: {e}")
    if sub == "speciation" and not c["food-locations"]:
        errs.append(f"{where}.food-locations: must be nonempty")
    if sub in ("chaos-sweep", "marginal-gap"):
        try:
            harness.ExperimentPlan(c["model"], c["ns"], c["replicas"], c["T"], params=c["params"])
        except ValueError as e:
            errs.append(f"{where}.ns: {e}")
    if sub == "chaos-sweep" and c["expect-slope"] and len(c["expect-slope"]) != 2:
        errs.append(f"{where}.expect-slope: must be [lo, hi]")
    if sub == "t1-check" and (c["N"] < 2 * c["ell"] or c["N"] > 8):
        errs.append(f"{where}.N: need 2*ell <= N <= 8")
    return errs


def _theta_law(s: str):
    if s == "uniform":
        return "uniform"
    if s.startswith("window:"):
        return ("window", float(s.split(":", 1)[1]))
    raise ValueError(f"unknown theta law {s!r}")


def _kernel_from(c):
    return boltzmann.CollisionKernel(c["gamma-family"], tuple(c["gamma-params"]), c["gamma-max"],
                                     c["b-family"], c["cos-min"])


# Subcommands ------------------------------------------------------------------


def _run_kac(c, w: RunWriter):
    times = np.arange(0.0, c["T"] + 1e-12, c["snapshot-interval"])
    if times[-1] < c["T"]:
        times = np.append(times, c["T"])
    rows = []
    for r in range(c["replicas"]):
        rng = make_stream(c["seed"], r)
        st = kac.chaotic_initial(c["N"], rng, c["law"])
        run = kac.simulate_kac(st, c["T"], rng, snapshot_times=times, theta_law=_theta_law(c["theta-law"]),
                               log_events=c["log-events"] and r == 0)
        for t, v in zip(run.times, run.snapshots):
            rows.append([r, repr(float(t)), repr(kac.sphere_energy(v)), repr(float(np.mean(v**2))),
                         repr(float(np.mean(v**4))), repr(float(v.sum()))])
        if run.events is not None:
            w.csv("events.csv", ["t", "i", "j", "theta"], run.events.to_csv_rows())
    w.csv("trajectory.csv", ["replica", "t", "energy", "m2", "m4", "momentum"], rows)
    return {}


def _run_circle(c, w):
    rep = circle.particle_vs_spectral(c["N"], c["tau"], c["T"], c["replicas"], seed=c["seed"], b0=c["b0"],
                                      family=c["rho-family"], n_times=c["snapshots"], K=c["K"], dt=c["dt"],
                                      enforce_sizes=False)
    w.csv("a1.csv", ["t", "a1_particle", "a1_spectral", "stderr"], rep.rows())
    g1 = float(noise_spectrum(WrappedNoise(c["rho-family"], c["tau"]), 1)[1])
    return {"lambda1": rep.lambda1, "gamma1": g1, "supercritical": bool(rep.lambda1 > 0)}


def _run_averaging(c, w):
    N = c["N"]
    g = averaging.NoiseLaw(c["g-family"], c["scale"])
    events = c["events"] or 50 * N
    every = c["record-every"] or N
    n = int(round(c["Xi"] / c["h"]))
    xi = c["h"] * np.arange(-n, n + 1)
    target = averaging.stationary_charfun(g.charfun, xi)
    rng = make_stream(c["seed"], 0)
    ens = averaging.AveragingEnsemble(np.zeros(N))
    rows = []
    done = 0
    while done < events:
        k = min(every, events - done)
        averaging.simulate_averaging(ens, g, k, rng)
        done += k
        res = float(np.max(np.abs(averaging.empirical_charfun(ens.x, xi) - target)))
        rows.append([ens.events, repr(ens.time), repr(float(np.var(ens.x))), repr(res)])
    w.csv("variance.csv", ["events", "t", "variance", "charfun_sup_residual"], rows)
    return {"stationary_variance": 2 * g.variance}


def _run_boltzmann(c, w):
    kern = _kernel_from(c)
    rng = make_stream(c["seed"], 0)
    ens = boltzmann.VelocityEnsemble3(rng.standard_normal((c["N"], 3)) * np.array([1.5, 0.7, 0.7]))
    times = np.linspace(0.0, c["T"], c["snapshots"])
    try:
        run = boltzmann.simulate_collisions(ens, kern, c["T"], rng, snapshot_times=times, log_events=c["log-events"])
    except boltzmann.KernelContractError as e:
        raise AssertionFailed(str(e)) from e
    rows = []
    for t, v in zip(run.times, run.snapshots):
        p = v.sum(axis=0)
        rows.append([repr(float(t)), repr(float(p[0])), repr(float(p[1])), repr(float(p[2])),
                     repr(0.5 * float(np.sum(v * v))), repr(boltzmann.anisotropy(v))])
    w.csv("moments.csv", ["t", "px", "py", "pz", "energy", "anisotropy"], rows)
    if run.events is not None:
        w.csv("events.csv", ["t", "i", "j", "sigma_x", "sigma_y", "sigma_z", "accepted"], run.events.to_csv_rows())
    dp, de = ens.conservation_error()
    if dp > 1e-9 or de > 1e-9:
        raise AssertionFailed(f"conservation drift: momentum {dp:.3g}, energy {de:.3g}")
    return {"candidates": run.n_candidates, "accepted": run.n_accepted, "momentum_drift": dp, "energy_drift": de}


def _run_speciation(c, w):
    food = speciation.FoodDistribution.atoms(c["food-locations"], c["food-mass"])
    params = speciation.SpeciationParams(c["sigma-x"], c["sigma"], c["mut-x"], c["mut-y"], c["mut-ystar"],
                                         c["dim-y"], c["cap"])
    n0 = c["initial-n"] or int(round(c["food-mass"]))
    init = speciation.Population.monomorphic(n0, c["initial-x"], c["dim-y"])
    try:
        run = speciation.run_speciation(food, params, c["generations"], seed=c["seed"], initial=init,
                                        bandwidth=c["bandwidth"])
    except speciation.PopulationCapExceeded as e:
        raise AssertionFailed(str(e)) from e
    w.csv("generations.csv", ["t", "N", "W_c", "modes_x", "modes_y", "mean_x", "var_x"], run.rows())
    bad = [r.t for r in run.records if abs(r.share_sum - 1) > 1e-12 or r.W_c < -1e-12]
    if bad:
        raise AssertionFailed(f"share or entropy invariant failed at generations {bad[:5]}")
    return {"extinct": run.extinct, "first_split": run.first_split}


def _run_chaos(c, w):
    plan = harness.ExperimentPlan(c["model"], c["ns"], c["replicas"], c["T"], seed=c["seed"], params=c["params"])
    rep = harness.chaos_sweep(plan)
    w.csv("chaos.csv", ["model", "N", "replicas", "defect", "stderr"],
          [[rep.model, r["N"], r["replicas"], repr(r["defect"]), repr(r["stderr"])] for r in rep.rows])
    (w.dir / "chaos.jsonl").write_text(rep.to_jsonl())
    w._track("chaos.jsonl")
    extra = {"slope": rep.fit.slope, "halfwidth": rep.fit.halfwidth, "warnings": rep.warnings}
    lo_hi = c["expect-slope"]
    if lo_hi and not (lo_hi[0] <= rep.fit.slope <= lo_hi[1]):
        raise AssertionFailed(f"fitted slope {rep.fit.slope:.3f} outside {lo_hi}", extra)
    return extra


def _run_t1(c, w):
    res = harness.t1_bound_check(c["N"], c["ell"], c["configs"], c["functions"], seed=c["seed"])
    w.csv("t1.csv", ["N", "ell", "configurations", "max_ratio", "violations", "max_difference"],
          [[res.N, res.ell, res.configurations, repr(res.max_ratio), res.violations, repr(res.max_difference)]])
    extra = {"max_ratio": res.max_ratio, "violations": res.violations}
    if res.violations:
        raise AssertionFailed(f"{res.violations} violations of the T1 bound", extra)
    return extra


def _run_gap(c, w):
    plan = harness.ExperimentPlan(c["model"], c["ns"], c["replicas"], c["T"], snapshots=c["snapshots"],
                                  seed=c["seed"], params=c["params"])
    rep = harness.marginal_gap(plan)
    w.csv("gap.csv", ["model", "N", "sup_gap", "stderr", "noise_floor"], rep.rows_csv())
    w.jsonl("gap.jsonl", [{"model": rep.model, "N": r.N, "gaps": r.gaps, "times": rep.times.tolist()} for r in rep.rows])
    ok = rep.decreasing()
    extra = {"non_increasing": ok}
    if c["assert-decreasing"] and not all(ok):
        raise AssertionFailed("marginal gap grows with N beyond two standard errors", extra)
    return extra


RUNNERS = {
    "kac": _run_kac,
    "circle": _run_circle,
    "averaging": _run_averaging,
    "boltzmann3": _run_boltzmann,
    "speciation": _run_speciation,
    "chaos-sweep": _run_chaos,
    "t1-check": _run_t1,
    "marginal-gap": _run_gap,
}


# Argument parsing -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pchaos", description="Propagation-of-chaos experiments.")
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--out", help="output root (overrides $PCHAOS_OUT)")
    p.add_argument("--run-dir", help="exact run directory (overrides the derived name)")
    sub = p.add_subparsers(dest="subcommand", required=True)
    for name, schema in SCHEMAS.items():
        sp = sub.add_parser(name, help=f"run {name}")
        for key, f in schema.items():
            flags = [f"--{key}"]
            if key.lower() != key:
                flags.append(f"--{key.lower()}")
            sp.add_argument(*flags, dest=key, default=argparse.SUPPRESS, help=f.help if f.default is REQUIRED else f"{f.help} (default {f.default!r})")
    return p


def _load_config(path: str, subcommand: str) -> dict:
    try:
        data = yaml.safe_load(Path(path).read_text()) or {}
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError([f"{path}: cannot read config: {e}"])
    if not isinstance(data, dict):
        raise ConfigError([f"{path}: top level must be a mapping"])
    if subcommand in data and isinstance(data[subcommand], dict):
        data = data[subcommand]
    elif any(k in SCHEMAS for k in data):
        data = {}
    return data


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # argparse exits 2 on unknown flags
        return EXIT_CONFIG if e.code else EXIT_OK
    sub = args.subcommand
    flags = {k: v for k, v in vars(args).items() if k in SCHEMAS[sub]}
    try:
        cfg = _load_config(args.config, sub) if args.config else {}
        cfg.update(flags)
        resolved = validate(sub, cfg, source=args.config or "<flags>")
    except ConfigError as e:
        for msg in e.errors:
            print(f"config error: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    digest = config_digest({"subcommand": sub, **resolved})[:12]
    run_dir = Path(args.run_dir) if args.run_dir else output_root(args.out) / f"{sub}-{digest}"
    writer = RunWriter(run_dir)
    start = time.perf_counter()
    status, code, extra = "ok", EXIT_OK, {}
    try:
        extra = RUNNERS[sub](resolved, writer) or {}
    except AssertionFailed as e:
        status, code = f"assertion failed: {e.args[0]}", EXIT_ASSERT
        extra = e.args[1] if len(e.args) > 1 else {}
        print(f"assertion failed: {e.args[0]}", file=sys.stderr)
    extra = {**extra, "backend": _kernels.BACKEND, "rng": RNG_ALGORITHM}
    writer.manifest(sub, resolved, resolved.get("seed"), time.perf_counter() - start, status, extra)
    print(run_dir)
    return code


def main():  # console entry point
    sys.exit(run())


if __name__ == "__main__":
    main()
