"""Command-line front end.

    python -m forcedmcf <subcommand> [--config FILE] [flags]

Every subcommand writes its outputs, a ``resolved.cfg`` holding the full
configuration and a ``manifest.json`` with sha256 digests into the output
directory. Re-running with ``--config resolved.cfg`` reproduces the
outputs byte for byte.

Exit codes: 0 pass, 1 a check or envelope failed, 2 usage error,
3 solver failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import shlex
import sys
import time
from dataclasses import replace
from functools import partial
from importlib import metadata
from pathlib import Path

import numpy as np

from . import arrival as A
from . import experiments as X
from .coeff_field import ConstantField, FieldSpec, ls_condition_margin, sample_field
from .grid import box_grid, front_grid
from .levelset import (TEST_MODE_ENV, HorizonExceeded, InitialSet, SolverError, Window,
                       evolve_until, init_state, write_snapshot)

EXIT_PASS, EXIT_FAIL, EXIT_USAGE, EXIT_SOLVER = 0, 1, 2, 3
OUTPUT_ENV = "FORCEDMCF_OUTPUT_DIR"
JOBS_ENV = "FORCEDMCF_JOBS"


class UsageError(Exception):
    pass


# ------------------------------------------------------------ key table

def _floats(s):
    if isinstance(s, (list, tuple)):
        return [float(v) for v in s]
    return [float(v) for v in str(s).replace(" ", "").split(",") if v]


def _vec(s):
    v = _floats(s)
    if len(v) != 2:
        raise ValueError("expected two comma-separated numbers")
    return v


def _box(s):
    v = _floats(s)
    if len(v) != 4:
        raise ValueError("expected x0,x1,y0,y1")
    return v


def _bool(s):
    if isinstance(s, bool):
        return s
    t = str(s).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected true/false")


def _int(s):
    return int(str(s), 0)


def _opt_float(s):
    if s is None or str(s).strip().lower() in ("", "none"):
        return None
    return float(s)


def _choice(*opts):
    def f(s):
        if s not in opts:
            raise ValueError(f"expected one of {', '.join(opts)}")
        return s
    f.__name__ = "choice"
    return f


# name -> (parser, default, help)
KEYS = {
    "c_min": (float, 1.0, "lower bound of the speed field"),
    "c_max": (float, 2.0, "upper bound of the speed field"),
    "lipschitz_bound": (float, 5.0, "Lipschitz bound L0 of the field"),
    "bump_radius": (float, 0.4, "bump radius r (at most 1/2 for unit range of dependence)"),
    "bump_intensity": (float, 1.0, "Poisson intensity of bump centres per unit area; 0 gives c = c_min"),
    "amp_lo": (float, 0.5, "lowest bump amplitude"),
    "amp_hi": (float, 1.0, "highest bump amplitude"),
    "constant": (_opt_float, None, "replace the random medium by the constant speed given"),
    "seed": (_int, 0, "master seed; per-task medium seeds derive from it"),
    "h": (float, 0.1, "grid spacing"),
    "width": (float, 40.0, "transverse window width"),
    "direction": (_vec, [1.0, 0.0], "front normal e, e.g. 1,0"),
    "times": (_floats, [10.0, 20.0, 40.0], "probe distances t, comma separated"),
    "seeds": (_int, 8, "number of medium seeds"),
    "periodic": (_choice("auto", "yes", "no"), "auto", "transverse periodic window (auto: yes for e = 1,0)"),
    "box": (_box, [-5.0, 5.0, -5.0, 5.0], "sampling rectangle x0,x1,y0,y1"),
    "spacing": (float, 0.1, "sampling spacing"),
    "source": (_choice("half-space", "disc"), "half-space", "initial set"),
    "radius": (float, 2.0, "disc radius"),
    "center": (_vec, [0.0, 0.0], "disc centre"),
    "until": (float, 1.0, "final time"),
    "horizon": (float, 10.0, "time horizon"),
    "disable_forcing": (_bool, False, "curvature only (requires FORCEDMCF_TEST_MODE=1)"),
    "R0": (float, 2.0, "regularity radius R0"),
    "n_directions": (_int, 8, "directions over a quarter circle"),
    "near_gap": (float, 0.01, "chord distance of the extra nearby direction"),
    "flat_times": (_floats, [20.0, 40.0, 80.0], "times at which the front width is measured"),
    "R": (float, 15.0, "radius of the ordered window"),
    "shrink": (float, 7.5, "window shrink before comparing"),
    "back_shift": (float, 1.0, "how far the inner source sits behind inside the window"),
    "bulge": (float, 2.0, "how far the inner source sticks out beyond the window"),
    "n": (float, 1.0, "scale n of the containment gap C2*n"),
}

_FIELD = ["c_min", "c_max", "lipschitz_bound", "bump_radius", "bump_intensity", "amp_lo",
          "amp_hi", "constant", "seed"]

SUBCOMMANDS = {
    "field": (_FIELD + ["box", "spacing"], {}),
    "evolve": (_FIELD + ["h", "width", "source", "direction", "radius", "center", "until",
                         "disable_forcing"], {}),
    "arrival": (_FIELD + ["h", "width", "source", "direction", "radius", "center", "horizon"], {}),
    "verify": (_FIELD + ["h", "width", "R0", "horizon", "seeds"], {"seeds": 1, "horizon": 16.0}),
    "speed": (_FIELD + ["h", "width", "direction", "times", "seeds", "periodic"], {}),
    "fluctuations": (_FIELD + ["h", "width", "direction", "times", "seeds", "periodic"],
                     {"seeds": 64, "times": [10.0, 20.0, 40.0, 80.0]}),
    "directions": (_FIELD + ["h", "width", "times", "seeds", "n_directions", "near_gap"],
                   {"times": [20.0]}),
    "flatness": (_FIELD + ["h", "width", "flat_times", "seeds"], {"seeds": 16}),
    "localization": (_FIELD + ["h", "width", "R", "shrink", "back_shift", "bulge", "horizon",
                               "n", "R0"], {"horizon": 12.0}),
}

HELP = {
    "field": "sample the speed field on a rectangle",
    "evolve": "evolve a front and write the final level-set snapshot",
    "arrival": "compute an arrival-time field",
    "verify": "run the nine regularity checks on one or more seeds",
    "speed": "estimate the effective speed in one direction",
    "fluctuations": "fluctuation exponent and tail check of arrival times",
    "directions": "effective speed over a quarter circle of directions",
    "flatness": "front width W(t)/t over seeds",
    "localization": "containment of arrival sublevel sets for ordered sources",
}


def defaults(sub):
    keys, over = SUBCOMMANDS[sub]
    return {k: over.get(k, KEYS[k][1]) for k in keys}


def _fmt_default(v):
    if isinstance(v, list):
        return ",".join(f"{x:g}" for x in v)
    return str(v)


def build_parser():
    p = argparse.ArgumentParser(prog="forcedmcf", description=__doc__.split("\n\n")[0],
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    sp = p.add_subparsers(dest="subcommand", required=True)
    for sub, (keys, _) in SUBCOMMANDS.items():
        q = sp.add_parser(sub, help=HELP[sub], description=HELP[sub])
        q.add_argument("--config", help="flat key = value file; flags override it")
        q.add_argument("--output-dir", help=f"output directory (env {OUTPUT_ENV}; "
                       f"default forcedmcf-out/{sub})")
        q.add_argument("--jobs", type=int, help=f"worker processes (env {JOBS_ENV}; default 1)")
        d = defaults(sub)
        for k in keys:
            flags = ["--" + k.replace("_", "-")]
            if k == "direction":
                flags.append("-e")
            if k == "disable_forcing":
                q.add_argument(*flags, dest=k, action="store_const", const=True,
                               default=argparse.SUPPRESS, help=KEYS[k][2])
                continue
            q.add_argument(*flags, dest=k, default=argparse.SUPPRESS,
                           help=f"{KEYS[k][2]} (default: {_fmt_default(d[k])})")
    return p


def read_config_file(path, sub):
    keys = set(SUBCOMMANDS[sub][0])
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise UsageError(f"config: cannot read {path}: {e.strerror}") from None
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {n}: expected 'key = value'")
        k, v = (s.strip() for s in line.split("=", 1))
        k = k.replace("-", "_")
        if k not in keys:
            raise UsageError(f"unknown key for {sub}: {k}")
        out[k] = v
    return out


def parse_config(argv):
    """Resolve defaults < config file < flags. Returns (sub, config, runtime opts)."""
    ns = build_parser().parse_args(argv)
    sub = ns.subcommand
    cfg = defaults(sub)
    raw = read_config_file(ns.config, sub) if ns.config else {}
    given = {k: v for k, v in vars(ns).items() if k in cfg}
    raw.update(given)
    for k, v in raw.items():
        try:
            cfg[k] = KEYS[k][0](v) if isinstance(v, str) or k == "disable_forcing" else v
        except (ValueError, TypeError) as e:
            raise UsageError(f"{k}: cannot parse {v!r}: {e}") from None
    spec = field_spec(cfg)
    try:
        spec.validate()
    except ValueError as e:
        raise UsageError(str(e)) from None
    if cfg.get("h", 1.0) <= 0:
        raise UsageError("h: must be positive")
    if "times" in cfg and any(b <= a for a, b in zip(cfg["times"], cfg["times"][1:])):
        raise UsageError("times: must be strictly increasing")
    if "seeds" in cfg and cfg["seeds"] < 1:
        raise UsageError("seeds: must be at least 1")
    if cfg.get("constant") is not None and not spec.c_min <= cfg["constant"] <= spec.c_max:
        raise UsageError("constant: must lie in [c_min, c_max]")
    out_dir = ns.output_dir or os.environ.get(OUTPUT_ENV) or f"forcedmcf-out/{sub}"
    jobs = ns.jobs if ns.jobs is not None else int(os.environ.get(JOBS_ENV, "1") or 1)
    return sub, cfg, {"output_dir": Path(out_dir), "jobs": max(1, jobs)}


def field_spec(cfg):
    return FieldSpec(c_min=cfg["c_min"], c_max=cfg["c_max"],
                     lipschitz_bound=cfg["lipschitz_bound"], bump_radius=cfg["bump_radius"],
                     bump_intensity=cfg["bump_intensity"], amp_lo=cfg["amp_lo"],
                     amp_hi=cfg["amp_hi"], seed=cfg["seed"] % 2 ** 64)


def config_text(sub, cfg):
    lines = [f"# forcedmcf {sub}"]
    for k in SUBCOMMANDS[sub][0]:
        v = cfg[k]
        lines.append(f"{k} = {_fmt_value(v)}")
    return "\n".join(lines) + "\n"


def _fmt_value(v):
    if isinstance(v, list):
        return ",".join(repr(float(x)) for x in v)
    if v is None:
        return "none"
    return repr(v) if isinstance(v, float) else str(v)


# ---------------------------------------------------------------- output

def write_json(path, obj):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(A._jsonable(obj), f, indent=2, sort_keys=True)
        f.write("\n")


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(v) for v in r])


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _version():
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def _medium(cfg, spec, seed):
    if cfg.get("constant") is not None:
        return ConstantField(cfg["constant"], spec)
    return sample_field(replace(spec, seed=seed), seed)


def _plan(cfg, spec, **kw):
    medium = ConstantField(cfg["constant"], spec) if cfg.get("constant") is not None else None
    return X.ExperimentPlan(spec=spec, times=cfg.get("times", [10.0]), n_seeds=max(cfg["seeds"], 2),
                            h=cfg["h"], width=cfg["width"], master_seed=cfg["seed"],
                            medium=medium, **kw)


def _periodic(cfg):
    e = np.asarray(cfg["direction"], dtype=float)
    e = e / np.linalg.norm(e)
    if cfg["periodic"] == "auto":
        return bool(np.allclose(e, (1.0, 0.0)))
    return cfg["periodic"] == "yes"


# ------------------------------------------------------------- handlers

def cmd_field(cfg, spec, out, jobs):
    f = _medium(cfg, spec, cfg["seed"])
    x0, x1, y0, y1 = cfg["box"]
    s = cfg["spacing"]
    xs = x0 + s * np.arange(int(math.floor((x1 - x0) / s + 1e-9)) + 1)
    ys = y0 + s * np.arange(int(math.floor((y1 - y0) / s + 1e-9)) + 1)
    Xg, Yg = np.meshgrid(xs, ys, indexing="ij")
    c = f.evaluate(Xg.ravel(), Yg.ravel())
    write_csv(out / "field.csv", ["x", "y", "c"], zip(Xg.ravel(), Yg.ravel(), c))
    summary = {"field": f.describe(), "min": float(c.min()), "max": float(c.max()),
               "mean": float(c.mean()), "certified_lipschitz": spec.certified_lipschitz(),
               "ls_condition_margin": ls_condition_margin(f, ((x0, x1), (y0, y1)), s)}
    write_json(out / "field.json", summary)
    ok = spec.c_min - 1e-12 <= summary["min"] and summary["max"] <= spec.c_max + 1e-12
    return (EXIT_PASS if ok else EXIT_FAIL), [cfg["seed"]]


def _source_and_grid(cfg, spec, reach):
    h = cfg["h"]
    if cfg["source"] == "disc":
        R = cfg["radius"]
        S = InitialSet.disc(tuple(cfg["center"]), R)
        g = box_grid(tuple(cfg["center"]), R + reach + 2.0, h)
        return S, g, None
    e = tuple(cfg["direction"])
    S = InitialSet.half_space(e)
    g = front_grid(e, h, reach + 4.0, cfg["width"], back=3.0, periodic=False)
    return S, g, Window()


def cmd_evolve(cfg, spec, out, jobs):
    if cfg["disable_forcing"]:
        if os.environ.get(TEST_MODE_ENV) != "1":
            raise UsageError("disable_forcing: the forcing must stay positive; set "
                             f"{TEST_MODE_ENV}=1 to run curvature-only solver tests")
        f, cm = None, 0.0
    else:
        f = _medium(cfg, spec, cfg["seed"])
        cm = spec.c_max
    S, g, win = _source_and_grid(cfg, spec, cm * cfg["until"])
    st = init_state(g, S, window=win)
    evolve_until(st, f, until_time=cfg["until"])
    write_snapshot(st, out / "snapshot.csv", out / "snapshot.json")
    return EXIT_PASS, [cfg["seed"]]


def cmd_arrival(cfg, spec, out, jobs):
    f = _medium(cfg, spec, cfg["seed"])
    S, g, _ = _source_and_grid(cfg, spec, spec.c_max * cfg["horizon"])
    m = A.compute_arrival(f, S, g, cfg["horizon"])
    m.write_csv(out / "arrival.csv")
    reached = np.isfinite(m.m)
    write_json(out / "arrival.json", {"field": f.describe(), "grid": g.to_dict(),
                                      "horizon": cfg["horizon"], "reached_nodes": int(reached.sum()),
                                      "max_time": float(m.m[reached].max()) if reached.any() else 0.0})
    return EXIT_PASS, [cfg["seed"]]


def cmd_verify(cfg, spec, out, jobs):
    vc = A.VerifyConfig(spec=spec, h=cfg["h"], R0=cfg["R0"], width=cfg["width"],
                        wide_width=2 * cfg["width"], horizon=cfg["horizon"])
    need = max(A.filling_time(vc.R0, spec.c_min), vc.semigroup_time, vc.localization_time + 1)
    if vc.horizon <= need:
        raise UsageError(f"horizon: verify needs a horizon above {need:g} (waiting time "
                         f"13*R0/(2*c_min) and the restart time)")
    seeds = X.derive_seeds(cfg["seed"], cfg["seeds"])
    res = X.map_tasks(partial(A.verify_suite, cfg=vc), seeds, jobs)
    rows = []
    allpass = True
    for s, reps in zip(seeds, res):
        rows.append({"seed": s, "reports": [r.to_dict() for r in reps]})
        allpass &= all(r.passed for r in reps)
    write_json(out / "reports.json", rows)
    write_csv(out / "reports.csv", ["seed", "check", "max_violation", "tolerance", "pass"],
              [(s, r.check, r.max_violation, r.tolerance, r.passed) for s, reps in zip(seeds, res)
               for r in reps])
    return (EXIT_PASS if allpass else EXIT_FAIL), seeds


def _write_samples(path, ests):
    rows = []
    for est in ests:
        rows.extend(est.raw_rows())
    write_csv(path, ["direction_x", "direction_y", "t", "seed", "m"], rows)


def _sanity(est, spec):
    tol = 0.05 * spec.c_max
    inc = bool(np.all(np.diff(est.mu) > 0))
    band = spec.c_min - tol <= est.c_bar <= spec.c_max + tol
    return inc, band


def cmd_speed(cfg, spec, out, jobs):
    plan = _plan(cfg, spec, periodic=_periodic(cfg))
    est = X.run_speed_experiment(plan, tuple(cfg["direction"]), jobs)
    _write_samples(out / "samples.csv", [est])
    write_csv(out / "speed_table.csv", ["t", "mu", "sigma", "t_over_mu"],
              [(t, est.mu[q], est.sigma[q], t / est.mu[q]) for q, t in enumerate(est.times)])
    inc, band = _sanity(est, spec)
    summary = est.to_dict()
    summary.update(mu_increasing=inc, c_bar_in_band=band, convergence=X.speed_convergence(est),
                   passed=inc and band)
    write_json(out / "speed.json", summary)
    return (EXIT_PASS if inc and band else EXIT_FAIL), est.seeds


def cmd_fluctuations(cfg, spec, out, jobs):
    if cfg["seeds"] < 64:
        raise UsageError("seeds: fluctuation statistics need at least 64 seeds")
    plan = _plan(cfg, spec, periodic=_periodic(cfg))
    seeds, M, _, _ = X.collect_samples(plan, tuple(cfg["direction"]), jobs)
    est = X.speed_estimate(tuple(cfg["direction"]), plan.times, seeds, M)
    fs = X.fluctuation_stats(plan.times, M)
    _write_samples(out / "samples.csv", [est])
    write_csv(out / "sigma_table.csv", ["t", "mu", "sigma"],
              [(t, est.mu[q], fs.sigma[q]) for q, t in enumerate(plan.times)])
    summary = {"fluctuations": fs.to_dict(), "speed": est.to_dict(),
               "convergence": X.speed_convergence(est)}
    doubles = [t for t in plan.times if 2 * t in plan.times]
    if len(doubles) >= 2:
        summary["linearity"] = X.linearity_report(plan.times, M, doubles[0], doubles[-1])
    ok = (not fs.degenerate and fs.beta <= 0.6 and fs.r2 >= 0.8 and fs.tails_ok()) or \
         (fs.degenerate and cfg.get("constant") is not None)
    summary["passed"] = bool(ok)
    write_json(out / "fluctuations.json", summary)
    return (EXIT_PASS if ok else EXIT_FAIL), seeds


def cmd_directions(cfg, spec, out, jobs):
    plan = _plan(cfg, spec, periodic=False)
    prof, ests = X.run_direction_profile(plan, cfg["n_directions"], cfg["near_gap"], jobs)
    _write_samples(out / "samples.csv", ests)
    write_csv(out / "profile.csv", ["theta", "c_bar", "c_bar_std"],
              zip(prof.angles, prof.estimates, prof.stds))
    summary = prof.to_dict()
    bands = [_sanity(e, spec)[1] for e in ests]
    ok = prof.near_ok() and prof.spread_ok() and all(bands)
    summary.update(in_band=all(bands), passed=bool(ok))
    write_json(out / "directions.json", summary)
    return (EXIT_PASS if ok else EXIT_FAIL), plan.seeds()


def cmd_flatness(cfg, spec, out, jobs):
    plan = _plan(cfg, spec, periodic=True, flat_times=cfg["flat_times"],
                 times=[cfg["flat_times"][0]])
    seeds, M, W, _ = X.collect_samples(plan, (1.0, 0.0), jobs, with_width=True)
    rep = X.flatness_report(plan.flat_times, W)
    write_csv(out / "widths.csv", ["seed", "t", "W"],
              [(s, t, W[k, q]) for k, s in enumerate(seeds) for q, t in enumerate(plan.flat_times)])
    write_json(out / "flatness.json", rep)
    return (EXIT_PASS if rep["passed"] else EXIT_FAIL), seeds


def cmd_localization(cfg, spec, out, jobs):
    plan = _plan(cfg, spec, periodic=False)
    rep = X.check_ordered_localization(plan, (1.0, 0.0), R=cfg["R"], shrink=cfg["shrink"],
                                       back_shift=cfg["back_shift"], bulge=cfg["bulge"],
                                       horizon=cfg["horizon"], n=cfg["n"], R0=cfg["R0"])
    write_json(out / "localization.json", rep)
    return (EXIT_PASS if rep["passed"] else EXIT_FAIL), plan.seeds()[:1]


HANDLERS = {"field": cmd_field, "evolve": cmd_evolve, "arrival": cmd_arrival,
            "verify": cmd_verify, "speed": cmd_speed, "fluctuations": cmd_fluctuations,
            "directions": cmd_directions, "flatness": cmd_flatness,
            "localization": cmd_localization}


def run(sub, cfg, opts):
    """Dispatch, then write resolved.cfg and manifest.json. Returns the exit code."""
    out = opts["output_dir"]
    out.mkdir(parents=True, exist_ok=True)
    spec = field_spec(cfg)
    start = time.time()
    (out / "resolved.cfg").write_text(config_text(sub, cfg), encoding="utf-8")
    code, seeds = HANDLERS[sub](cfg, spec, out, opts["jobs"])
    files = sorted(p for p in out.iterdir() if p.is_file() and p.name != "manifest.json")
    manifest = {
        "artifact_version": _version(),
        "subcommand": sub,
        "config": cfg,
        "master_seed": cfg["seed"],
        "task_seeds": [int(s) for s in seeds],
        "start_wall_time": start,
        "end_wall_time": time.time(),
        "exit_code": code,
        "outputs": {p.name: sha256(p) for p in files},
        "replay": f"python -m forcedmcf {sub} --config {shlex.quote(str(out / 'resolved.cfg'))} "
                  f"--output-dir <new-dir>",
    }
    write_json(out / "manifest.json", manifest)
    return code


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    try:
        sub, cfg, opts = parse_config(argv)
        return run(sub, cfg, opts)
    except UsageError as e:
        print(f"forcedmcf: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (SolverError, HorizonExceeded) as e:
        print(f"forcedmcf: solver failure: {e}", file=sys.stderr)
        return EXIT_SOLVER
    except SystemExit as e:   # argparse
        return EXIT_USAGE if e.code not in (0, None) else EXIT_PASS


if __name__ == "__main__":
    sys.exit(main())
