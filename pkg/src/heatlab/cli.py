"""Batch driver: ``heatlab <subcommand> [--config FILE] [--seed N] [--out DIR] [--threads N]``.

Every artifact gets a ``<name>.meta.json`` sidecar holding the resolved
configuration and the package version. On failure the partial outputs of the
run are removed, a machine-readable ``error.json`` is written and the exit
status is 1.
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import math
import os
import sys
import traceback
from pathlib import Path

import numpy as np

from . import __version__
from .parallel import set_threads

SUBCOMMANDS = ("kernel", "identities", "bounds", "cancel", "factor", "model", "spectrum")
ESTIMATES = ("heat_H", "heat_H_tau", "Htilde", "Gtilde", "Szego", "R", "lemma")

DEFAULTS = {
    "weight": "abs2",
    "tau": 1.0,
    "grid": {"R": 3.0, "N": 32},
    "method": "krylov",
    "seed": 0,
    "plots": False,
    "output_dir": "heatlab_out",
    "kernel": {"s": [1.0], "w": [0.0, 0.0], "kind": "H", "form": None},
    "identities": {"n_max": 20, "draws": 1000, "max_degree": 8},
    "bounds": {"estimate_id": "heat_H", "derivative": {"n": 0, "ell": 0}, "k_time": 0,
               "s": [0.05, 0.1, 0.2, 0.5, 1.0, 2.0],
               "anchors": [[0.0, 0.0], [0.4, 0.2], [-0.5, 0.3]], "radius": 0.75,
               "n_samples": 400},
    "cancel": {"z": [0.0, 0.0], "s": 1.0, "derivative": {"n": 0, "ell": 0},
               "factors": [0.25, 0.5, 1.0], "grid": {"R": 3.0, "N": 64}},
    "factor": {"parts": ["abs2", "abs2"], "J": [1], "s": 0.5, "grid": {"R": 3.0, "N": 16},
               "n_points": 12, "oracle": True},
    "model": {"s": [1.0], "t": [-1.0, 0.0, 1.0], "pairs": [[[0.75, 0.0], [-0.75, 0.0]]],
              "quadrature": {"tau_max": 16.0, "nodes": 129, "rule": "trapezoid",
                             "window": "cosine_taper", "taper": 0.2},
              "N_exponents": [1, 2], "on_tail": "drop", "fit": False},
    "spectrum": {"k": 6, "tau": [0.5, 1.0, 2.0, 4.0], "variants": ["Box", "BoxTilde"],
                 "form": "factored"},
}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- configuration

def _merge(base, over, path=""):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown config key {path + k!r}")
        if isinstance(base[k], dict) and k != "weight":
            if not isinstance(v, dict):
                raise ConfigError(f"{path + k!r} must be an object")
            out[k] = _merge(base[k], v, path + k + ".")
        else:
            out[k] = copy.deepcopy(v)
    return out


def _finite(x, where):
    if isinstance(x, bool) or x is None or isinstance(x, str):
        return
    if isinstance(x, (int, float)):
        if not math.isfinite(x):
            raise ConfigError(f"non-finite number in {where}")
    elif isinstance(x, dict):
        for k, v in x.items():
            _finite(v, f"{where}.{k}")
    elif isinstance(x, list):
        for v in x:
            _finite(v, where)
    else:
        raise ConfigError(f"unsupported value of type {type(x).__name__} in {where}")


def _positive_list(x, where):
    vals = x if isinstance(x, list) else [x]
    if not vals or any(not isinstance(v, (int, float)) or isinstance(v, bool) or v <= 0
                       for v in vals):
        raise ConfigError(f"{where} must be a positive number or a nonempty list of them")
    return [float(v) for v in vals]


def resolve_config(raw=None, *, seed=None, out=None):
    """Defaults merged with ``raw`` and validated; returns a JSON-ready dict."""
    cfg = _merge(DEFAULTS, raw or {})
    if seed is not None:
        cfg["seed"] = int(seed)
    if out is not None:
        cfg["output_dir"] = str(out)
    _finite(cfg, "config")
    cfg["tau"] = _positive_list(cfg["tau"], "tau")
    g = cfg["grid"]
    if g["R"] <= 0 or int(g["N"]) != g["N"] or g["N"] < 4:
        raise ConfigError("grid needs R > 0 and an integer N >= 4")
    if cfg["bounds"]["estimate_id"] not in ESTIMATES:
        raise ConfigError(f"bounds.estimate_id must be one of {ESTIMATES}")
    if cfg["kernel"]["kind"] not in ("H", "Htilde"):
        raise ConfigError("kernel.kind must be H or Htilde")
    if not isinstance(cfg["seed"], int):
        raise ConfigError("seed must be an integer")
    return cfg


def load_config(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None


def _cplx(v):
    if isinstance(v, (int, float)):
        return complex(v)
    if isinstance(v, list) and len(v) == 2:
        return complex(v[0], v[1])
    raise ConfigError(f"point {v!r} must be a number or [re, im]")


# ---------------------------------------------------------------- output bookkeeping

class Outputs:
    def __init__(self, directory, cfg, subcommand):
        self.dir = Path(directory)
        self.cfg, self.sub = cfg, subcommand
        self.written = []

    def path(self, name):
        self.dir.mkdir(parents=True, exist_ok=True)
        p = self.dir / name
        self.written.append(p)
        return p

    def sidecar(self, p):
        meta = {"file": p.name, "subcommand": self.sub, "version": __version__, "config": self.cfg}
        side = self.path(p.name + ".meta.json")
        side.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")

    def json(self, name, obj):
        p = self.path(name)
        p.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")
        self.sidecar(p)
        return p

    def csv(self, name, header, rows):
        p = self.path(name)
        with p.open("w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(header)
            for r in rows:
                wr.writerow([repr(float(x)) if isinstance(x, (float, np.floating, int, np.integer))
                             and not isinstance(x, bool) else x for x in r])
        self.sidecar(p)
        return p

    def cleanup(self):
        for p in self.written:
            p.unlink(missing_ok=True)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, (complex, np.complexfloating)):
        return [_jsonable(x.real), _jsonable(x.imag)]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    return x


def _tag(tau):
    return f"tau{tau:g}"


# ---------------------------------------------------------------- subcommands

def _setup(cfg):
    from .operators import make_grid
    from .weights import load_weight
    return load_weight(cfg["weight"]), make_grid(float(cfg["grid"]["R"]), int(cfg["grid"]["N"]))


def run_identities(cfg, out):
    from .combinatorics import identity_sweep
    from .weights import random_identity_sweep
    c = cfg["identities"]
    exact = identity_sweep(int(c["n_max"]))
    analytic = random_identity_sweep(int(c["draws"]), seed=cfg["seed"],
                                     max_degree=int(c["max_degree"]))
    checks = dict(exact["checks"])
    checks.update({k: ("pass" if v <= 1e-12 else "fail") for k, v in analytic.items()})
    out.json("identities.json", {"checks": checks, "max_rel_defect": analytic,
                                 "exact_failures": exact["failures"], "n_max": exact["n_max"]})


def run_kernel(cfg, out):
    from .operators import assemble_box
    from .semigroup import heat_apply_many, KernelSlice
    p, g = _setup(cfg)
    c = cfg["kernel"]
    s_values = _positive_list(c["s"], "kernel.s")
    wi = g.nearest_index(_cplx(c["w"]))
    variant = "Box" if c["kind"] == "H" else "BoxTilde"
    form = c["form"] or ("schrodinger" if variant == "Box" else "factored")
    for tau in cfg["tau"]:
        op = assemble_box(p, tau, g, variant, form)
        cols = heat_apply_many(op, g.delta(wi), s_values, cfg["method"])
        for s, col in zip(s_values, cols):
            ks = KernelSlice(c["kind"], s, tau, wi, col, g)
            path = out.path(ks.filename)
            ks.to_csv(out.dir)
            out.sidecar(path)
            if cfg["plots"]:
                from .plots import heatmap_svg
                svg = out.path(Path(ks.filename).stem + ".svg")
                heatmap_svg(svg, np.abs(col).reshape(g.N, g.N),
                            title=f"|{c['kind']}| s={s:g} tau={tau:g}")
                out.sidecar(svg)


def run_bounds(cfg, out):
    from .bounds import (DerivativeSpec, KernelBlockEvaluator, fit_gaussian_bound, fit_gtilde_bound,
                         kernel_samples, preliminary_inequalities)
    p, g = _setup(cfg)
    c = cfg["bounds"]
    est = c["estimate_id"]
    for tau in cfg["tau"]:
        if est == "lemma":
            reps = preliminary_inequalities(p, tau, n_samples=int(c["n_samples"]), seed=cfg["seed"])
            for key, r in reps.items():
                out.json(f"bounds_{r.estimate_id}_{_tag(tau)}.json", r.to_json())
                path = out.path(f"bounds_{r.estimate_id}_{_tag(tau)}.csv")
                r.write_csv(path)
                out.sidecar(path)
            continue
        spec = DerivativeSpec.from_counts(int(c["derivative"]["n"]), int(c["derivative"]["ell"]))
        kind = {"heat_H": "H", "heat_H_tau": "H"}.get(est, est)
        ev = KernelBlockEvaluator(p, g, kind, method=cfg["method"])
        ks = kernel_samples(p, tau, g, kind=kind, spec=spec, k_time=int(c["k_time"]),
                            s_values=_positive_list(c["s"], "bounds.s"),
                            anchors=[_cplx(a) for a in c["anchors"]], radius=float(c["radius"]),
                            evaluator=ev)
        if kind == "H":
            r = fit_gaussian_bound(ks, tau_decay=est == "heat_H_tau")
        else:
            r = fit_gtilde_bound(ks, kind)
        r.extra["derivative"] = spec.to_json()
        out.json(f"bounds_{est}_{_tag(tau)}.json", r.to_json())
        path = out.path(f"bounds_{est}_{_tag(tau)}.csv")
        r.write_csv(path)
        out.sidecar(path)


def run_cancel(cfg, out):
    from .bounds import DerivativeSpec, cancellation_sweep
    from .operators import make_grid
    p, _ = _setup(cfg)
    c = cfg["cancel"]
    # the bump radius must span two spacings, so this task has its own grid
    g = make_grid(float(c["grid"]["R"]), int(c["grid"]["N"]))
    spec = DerivativeSpec.from_counts(int(c["derivative"]["n"]), int(c["derivative"]["ell"]))
    rows, summary = [], {}
    for tau in cfg["tau"]:
        res, spread = cancellation_sweep(p, tau, g, _cplx(c["z"]), spec, float(c["s"]),
                                         factors=tuple(float(f) for f in c["factors"]),
                                         method=cfg["method"])
        summary[_tag(tau)] = {"max_over_min": spread, "pass": spread <= 3.0,
                              "untrusted": any(r.untrusted for r in res)}
        rows += [(tau, r.delta, r.lhs, r.rhs, r.ratio, int(r.untrusted)) for r in res]
    out.csv("cancel.csv", ["tau", "delta", "lhs", "rhs", "ratio", "untrusted"], rows)
    out.json("cancel.json", {"derivative": spec.to_json(), "sweeps": summary})


def run_factor(cfg, out):
    from .factorization import (DecoupledWeight, FormIndex, ProductKernel, tensor_kernel,
                                write_samples_csv)
    from .operators import make_grid
    from .weights import load_weight
    c = cfg["factor"]
    parts = [load_weight(x) for x in c["parts"]]
    results = {}
    for tau in cfg["tau"]:
        dw = DecoupledWeight(parts, tau)
        grids = [make_grid(float(c["grid"]["R"]), int(c["grid"]["N"])) for _ in parts]
        J = FormIndex(dw.n, tuple(c["J"]))
        pk = ProductKernel(dw, J, float(c["s"]), grids, method=cfg["method"])
        rng = np.random.default_rng(cfg["seed"])
        g0 = grids[0]
        lim = 0.5 * g0.R
        w_idx = tuple(g.nearest_index(0j) for g in grids)
        w = tuple(g.points[i] for g, i in zip(grids, w_idx))
        rows = []
        zs = [tuple(g.points[g.nearest_index(complex(*rng.uniform(-lim, lim, 2)))] for g in grids)
              for _ in range(int(c["n_points"]))]
        for z in zs:
            rows.append((z, w, pk(z, w)))
        path = out.path(f"factor_{_tag(tau)}.csv")
        write_samples_csv(path, rows)
        out.sidecar(path)
        info = {"J": list(J.J), "n": dw.n, "s": float(c["s"]), "n_points": len(rows)}
        if c["oracle"]:
            T = tensor_kernel(dw, J, float(c["s"]), w_idx, grids)
            ref = np.array([T[tuple(g.nearest_index(zk) for g, zk in zip(grids, z))] for z in zs])
            got = np.array([v for _, _, v in rows])
            info["oracle_max_rel_err"] = float(np.max(np.abs(got - ref)) / np.max(np.abs(ref)))
        results[_tag(tau)] = info
    out.json("factor.json", results)


def run_model(cfg, out):
    from .model import TauQuadrature, model_decay_check, model_samples, write_model_csv
    p, g = _setup(cfg)
    c = cfg["model"]
    q = c["quadrature"]
    quad = TauQuadrature(float(q["tau_max"]), int(q["nodes"]), rule=q["rule"], window=q["window"],
                         taper=float(q["taper"]))
    pairs = [(_cplx(z), _cplx(w)) for z, w in c["pairs"]]
    S = model_samples(p, g, lambda s, z, w: quad, _positive_list(c["s"], "model.s"), pairs,
                      [float(t) for t in c["t"]], on_tail=c["on_tail"])
    summary = {"quadrature": quad.to_json(), "n_samples": int(len(S["s"])),
               "dropped_tail": int(S["dropped"])}
    if c["fit"]:
        reps = model_decay_check(p, S, tuple(int(n) for n in c["N_exponents"]))
        summary["fits"] = {str(k): r.to_json() for k, r in reps.items()}
    path = out.path("model.csv")
    write_model_csv(path, S, p)
    out.sidecar(path)
    out.json("model.json", summary)


def run_spectrum(cfg, out):
    from .operators import assemble_box
    from .semigroup import lowest_eigenpairs
    p, g = _setup(cfg)
    c = cfg["spectrum"]
    k = int(c["k"])
    taus = _positive_list(c["tau"], "spectrum.tau")
    rows, series = [], {}
    for variant in c["variants"]:
        ys = []
        for tau in taus:
            w, _ = lowest_eigenpairs(assemble_box(p, tau, g, variant, c["form"]), k)
            rows += [(variant, tau, i, float(x)) for i, x in enumerate(w)]
            ys.append(w)
        ys = np.array(ys)
        for i in range(min(k, 3)):
            series[f"{variant} #{i}"] = (taus, np.maximum(ys[:, i], 1e-16))
    out.csv("spectrum.csv", ["variant", "tau", "index", "eigenvalue"], rows)
    if cfg["plots"]:
        from .plots import line_svg
        svg = out.path("spectrum.svg")
        line_svg(svg, series, title="lowest eigenvalues", xlabel="tau", ylabel="eigenvalue",
                 logy=True)
        out.sidecar(svg)


RUNNERS = {"kernel": run_kernel, "identities": run_identities, "bounds": run_bounds,
           "cancel": run_cancel, "factor": run_factor, "model": run_model,
           "spectrum": run_spectrum}


# ---------------------------------------------------------------- entry point

def build_parser():
    ap = argparse.ArgumentParser(prog="heatlab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=Path, help="JSON experiment config")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", type=Path, help="output directory")
        sp.add_argument("--threads", type=int, help="worker threads (else HEATLAB_THREADS, else 1)")
    return ap


def run(subcommand, cfg):
    """Run one subcommand on a resolved config; returns the exit status."""
    out = Outputs(cfg["output_dir"], cfg, subcommand)
    try:
        RUNNERS[subcommand](cfg, out)
    except Exception as exc:  # every module failure becomes an error record
        out.cleanup()
        err = {"status": "error", "subcommand": subcommand, "type": type(exc).__name__,
               "message": str(exc), "version": __version__}
        Path(out.dir).mkdir(parents=True, exist_ok=True)
        (Path(out.dir) / "error.json").write_text(json.dumps(err, indent=2, sort_keys=True) + "\n")
        print(json.dumps(err), file=sys.stderr)
        if "HEATLAB_DEBUG" in os.environ:
            traceback.print_exc()
        return 1
    (Path(out.dir) / "error.json").unlink(missing_ok=True)
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        raw = load_config(args.config) if args.config else {}
        cfg = resolve_config(raw, seed=args.seed, out=args.out)
        set_threads(args.threads)
    except (ConfigError, OSError, ValueError) as exc:
        err = {"status": "error", "subcommand": args.subcommand, "type": type(exc).__name__,
               "message": str(exc), "version": __version__}
        print(json.dumps(err), file=sys.stderr)
        return 1
    return run(args.subcommand, cfg)


if __name__ == "__main__":
    sys.exit(main())
