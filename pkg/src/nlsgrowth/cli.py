"""Config-driven command line entry points.

Every command reads one JSON config (unknown keys are errors), writes its
outputs under --out and a run.json whose ``wall_clock`` field is the only
timing information.  Exit codes: 0 success, 1 criterion failure, 2 invalid config.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time

import numpy as np

from . import cascade, lambda_set, normal_form, resonance, toy_model
from .dynamics import Trajectory
from .modes import ConvPotential, decaying_potential, dump_json, square_box, zero_potential

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


class ConfigError(ValueError):
    pass


# ----------------------------------------------------------------------------
# config validation


def _int(lo=None, hi=None):
    def conv(key, v):
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(f"{key}: expected an integer, got {v!r}")
        if (lo is not None and v < lo) or (hi is not None and v > hi):
            raise ConfigError(f"{key}: {v} outside [{lo}, {hi}]")
        return v
    return conv


def _float(lo=None, hi=None, open_lo=False, open_hi=False):
    def conv(key, v):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {v!r}")
        v = float(v)
        if not math.isfinite(v):
            raise ConfigError(f"{key}: must be finite")
        if lo is not None and (v < lo or open_lo and v == lo):
            raise ConfigError(f"{key}: {v} below the allowed range")
        if hi is not None and (v > hi or open_hi and v == hi):
            raise ConfigError(f"{key}: {v} above the allowed range")
        return v
    return conv


def _bool(key, v):
    if not isinstance(v, bool):
        raise ConfigError(f"{key}: expected true or false")
    return v


def _choice(*options):
    def conv(key, v):
        if v not in options:
            raise ConfigError(f"{key}: expected one of {options}, got {v!r}")
        return v
    return conv


def _str(key, v):
    if not isinstance(v, str) or not v:
        raise ConfigError(f"{key}: expected a non-empty string")
    return v


def _float_list(lo=None, min_len=1):
    def conv(key, v):
        if not isinstance(v, list) or len(v) < min_len:
            raise ConfigError(f"{key}: expected a list of at least {min_len} numbers")
        return [_float(lo, open_lo=True)(key, x) for x in v]
    return conv


def _modes(key, v):
    if not isinstance(v, list) or not all(isinstance(p, list) and len(p) == 2 and all(
            isinstance(c, int) and not isinstance(c, bool) for c in p) for p in v):
        raise ConfigError(f"{key}: expected a list of [x, y] integer pairs")
    return [tuple(p) for p in v]


def _complex_list(key, v):
    if not isinstance(v, list) or len(v) < 2:
        raise ConfigError(f"{key}: expected a list of at least 2 entries")
    out = []
    for x in v:
        if isinstance(x, list) and len(x) == 2:
            out.append(complex(_float()(key, x[0]), _float()(key, x[1])))
        else:
            out.append(complex(_float()(key, x)))
    return out


def _potential(key, v):
    if v == "zero":
        return zero_potential()
    if v == "decaying":
        return decaying_potential()
    if isinstance(v, dict) and v.get("kind") == "decaying":
        extra = set(v) - {"kind", "amplitude", "radius", "s0"}
        if extra:
            raise ConfigError(f"{key}: unknown keys {sorted(extra)}")
        return decaying_potential(_float(0.0)(key, v.get("amplitude", 0.3)), _int(0, 50)(key, v.get("radius", 3)),
                                  _float(0.0, open_lo=True)(key, v.get("s0", 2.0)))
    if isinstance(v, dict) and "coeffs" in v:
        extra = set(v) - {"coeffs", "s0", "hs0_norm", "decay_constant"}
        if extra:
            raise ConfigError(f"{key}: unknown keys {sorted(extra)}")
        try:
            return ConvPotential.from_json(v)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"{key}: {exc}") from None
    raise ConfigError(f"{key}: expected 'zero', 'decaying' or a potential object")


ETA = _float(0.0, 1.0, open_lo=True, open_hi=True)


def validate(cfg: dict, schema: dict) -> dict:
    """Apply converters; keys missing from cfg take the schema default (None = unset)."""
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(cfg) - set(schema))
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    out = {}
    for key, (conv, default) in schema.items():
        v = cfg.get(key, default)
        out[key] = None if v is None else conv(key, v)
    return out


def _load_set(cfg, certified: bool) -> lambda_set.GenerationSet:
    if cfg.get("set"):
        try:
            return lambda_set.load_set(cfg["set"])
        except (OSError, KeyError, ValueError, TypeError) as exc:
            raise ConfigError(f"set: cannot load {cfg['set']}: {exc}") from None
    if cfg.get("N") is None:
        raise ConfigError("need either 'set' (a path) or 'N' (a shipped reference set)")
    try:
        return lambda_set.reference_set(cfg["N"], certified)
    except FileNotFoundError as exc:
        raise ConfigError(str(exc)) from None


# ----------------------------------------------------------------------------
# output helpers


class Run:
    def __init__(self, args, command: str, cfg: dict):
        self.out = args.out
        self.quiet = args.quiet
        self.command = command
        self.cfg = cfg
        self.seed = args.seed
        self.start = time.monotonic()
        os.makedirs(self.out, exist_ok=True)

    def path(self, name):
        return os.path.join(self.out, name)

    def say(self, msg):
        if not self.quiet:
            print(msg)

    def finish(self, summary: dict, passed: bool) -> int:
        doc = {"command": self.command, "config": _jsonable(self.cfg), "seed": self.seed,
               "summary": _jsonable(summary), "passed": bool(passed),
               "wall_clock": round(time.monotonic() - self.start, 3)}
        dump_json(doc, self.path("run.json"))
        self.say("PASS" if passed else "FAIL")
        return EXIT_OK if passed else EXIT_FAIL


def _jsonable(x):
    if isinstance(x, ConvPotential):
        return x.to_json()
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, complex):
        return [x.real, x.imag]
    return x


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


# ----------------------------------------------------------------------------
# commands

RESONANCE_SCHEMA = {
    "radius": (_int(0, 40), None),
    "potential": (_potential, "zero"),
    "eta": (ETA, resonance.DEFAULT_ETA),
    "kappa0": (_int(0), None),
    "write_tuples": (_bool, None),
}
MAX_JSONL_RADIUS = 6


def cmd_resonance_scan(args, raw) -> int:
    cfg = validate(raw, RESONANCE_SCHEMA)
    if cfg["radius"] is None:
        raise ConfigError("radius is required")
    V, eta, R = cfg["potential"], cfg["eta"], cfg["radius"]
    k0 = resonance.kappa0(V) if cfg["kappa0"] is None else cfg["kappa0"]
    write = R <= MAX_JSONL_RADIUS if cfg["write_tuples"] is None else cfg["write_tuples"]
    if write and R > MAX_JSONL_RADIUS:
        raise ConfigError(f"write_tuples needs radius <= {MAX_JSONL_RADIUS}")
    run = Run(args, "resonance-scan", cfg)
    summary = resonance.scan_square(R, V, eta, k0)
    summary.update(radius=R, eta=eta, kappa0=k0)
    written = 0
    if write:
        bt = normal_form.box_tuples(square_box(R), V, eta, k0)
        i, j, k, l = bt.i, bt.j, bt.k, bt.l
        lex = lambda a, b: (a[0] < b[0]) | ((a[0] == b[0]) & ((a[1] < b[1]) | ((a[1] == b[1]) & ((a[2] < b[2]) | ((a[2] == b[2]) & (a[3] <= b[3]))))))
        t = (i, j, k, l)
        canon = lex(t, (k, j, i, l)) & lex(t, (i, l, k, j)) & lex(t, (k, l, i, j))
        sel = np.nonzero(bt.offdiag & canon)[0]
        with open(run.path("tuples.jsonl"), "w") as fh:
            for s in sel:
                n = bt.tuple_at(int(s))
                fh.write(json.dumps({"n": [list(p) for p in n], "rho": float(bt.rho[s]), "alt_sq": int(bt.asq[s]),
                                     "class": resonance.CLASSES[int(bt.cls[s])]}) + "\n")
                written += 1
    summary["tuples_written"] = written
    dump_json(_jsonable(summary), run.path("summary.json"))
    for c in resonance.CLASSES:
        run.say(f"{c:12s} {summary[c]}")
    ok = summary["max_abs_F"] <= normal_form.F_BOUND
    return run.finish(summary, ok)


NF_SCHEMA = {
    "radius": (_int(0, 12), None),
    "box": (_modes, None),
    "potential": (_potential, "zero"),
    "eta": (ETA, resonance.DEFAULT_ETA),
    "kappa0": (_int(0), None),
    "tol": (_float(0.0, open_lo=True), 1e-12),
    "corrupt": (_float(), 0.0),
}


def cmd_nf_check(args, raw) -> int:
    cfg = validate(raw, NF_SCHEMA)
    if (cfg["radius"] is None) == (cfg["box"] is None):
        raise ConfigError("give exactly one of radius and box")
    box = square_box(cfg["radius"]) if cfg["box"] is None else cfg["box"]
    run = Run(args, "nf-check", cfg)
    try:
        rep = normal_form.cancellation_check(box, cfg["potential"], cfg["eta"], cfg["kappa0"], cfg["tol"], cfg["corrupt"])
        rep["max_abs_F"] = normal_form.max_abs_F(box, cfg["potential"], cfg["eta"], cfg["kappa0"]) if box else 0.0
    except normal_form.NormalFormError as exc:
        rep = {"passed": False, "error": str(exc)}
    dump_json(_jsonable(rep), run.path("nf_report.json"))
    if "counts" in rep:
        text = normal_form.format_cancellation_report(rep).splitlines()
        run.say("\n".join(text[:-1] if rep["passed"] else text))
    else:
        run.say(rep["error"])
    return run.finish({k: v for k, v in rep.items() if k != "counts"}, rep["passed"])


LAMBDA_SCHEMA = {
    "build": {
        "N": (_int(2, lambda_set.MAX_N), None),
        "search_budget": (_int(1), 50),
        "radius": (_int(8), 4000),
        "check_scale": (_int(1), 46),
        "growth_s": (_float(1.0, open_lo=True), 2.0),
        "step_tries": (_int(1), 3),
        "eta": (ETA, resonance.DEFAULT_ETA),
    },
    "verify": {
        "set": (_str, None),
        "N": (_int(3, 5), None),
        "certified": (_bool, True),
        "potential": (_potential, "zero"),
        "box_margin": (_int(0), 0),
        "spreading_threshold": (_int(2), 2),
    },
    "certify": {
        "set": (_str, None),
        "N": (_int(3, 5), None),
        "potential": (_potential, "decaying"),
        "eta": (ETA, None),
        "box_margin": (_int(0), 0),
    },
}


def _report_lines(run, rep):
    for name, r in rep.results.items():
        tail = "" if r["pass"] else f"  witness: {r['witness']}"
        run.say(f"condition {name:4s} {'PASS' if r['pass'] else 'FAIL'}{tail}")
    for s in rep.structural:
        run.say(f"structural: {s}")


def cmd_lambda(args, raw) -> int:
    action = args.action
    cfg = validate(raw, LAMBDA_SCHEMA[action])
    if action == "build":
        if cfg["N"] is None:
            raise ConfigError("N is required")
        run = Run(args, "lambda build", cfg)
        try:
            S = lambda_set.construct_base(cfg["N"], cfg["search_budget"], args.seed, radius=cfg["radius"],
                                          check_scale=cfg["check_scale"], growth_s=cfg["growth_s"],
                                          step_tries=cfg["step_tries"])
        except lambda_set.SearchBudgetExhausted as exc:
            run.say(str(exc))
            return run.finish({"error": str(exc)}, False)
        S.eta = cfg["eta"]
        rep = lambda_set.verify(S, zero_potential())
        with open(run.path("set.json"), "w") as fh:
            fh.write(S.dumps() + "\n")
        dump_json(_jsonable(rep.to_json()), run.path("report.json"))
        _report_lines(run, rep)
        summary = {"N": S.N, "modes_per_generation": [len(g) for g in S.generations], "passed": rep.passed}
        if S.N >= 4:
            summary["growth"] = lambda_set.growth_stats(S, cfg["growth_s"])
        return run.finish(summary, rep.passed)
    if action == "verify":
        S = _load_set(cfg, cfg["certified"])
        run = Run(args, "lambda verify", cfg)
        rep = lambda_set.verify(S, cfg["potential"], cfg["box_margin"], cfg["spreading_threshold"])
        dump_json(_jsonable(rep.to_json()), run.path("report.json"))
        _report_lines(run, rep)
        return run.finish({"N": S.N, "failed": rep.failed(), "structural": rep.structural}, rep.passed)
    S = _load_set(cfg, False)
    run = Run(args, "lambda certify", cfg)
    C, rep = lambda_set.certify_full(S, cfg["potential"], cfg["eta"], cfg["box_margin"])
    with open(run.path("certified_set.json"), "w") as fh:
        fh.write(C.dumps() + "\n")
    dump_json(_jsonable(rep.to_json()), run.path("report.json"))
    _report_lines(run, rep)
    sizes = [len(g) for g in C.generations]
    ok = rep.passed and all(n == 2 ** (C.N - 1) for n in sizes)
    return run.finish({"N": C.N, "modes_per_generation": sizes, "stats": rep.stats, "failed": rep.failed()}, ok)


TOY_SCHEMA = {
    "run": {
        "b0": (_complex_list, None),
        "t_end": (_float(0.0), 10.0),
        "samples": (_int(7), 513),
        "rel_tol": (_float(0.0, open_lo=True), 1e-12),
        "rescale": (_float_list(0.0), [0.5, 2.0, 10.0]),
        "residual_tol": (_float(0.0, open_lo=True), 1e-8),
    },
    "slider": {
        "N": (_int(2, 64), None),
        "start": (_int(1), None),
        "end": (_int(1), None),
        "eps": (_float(0.0, 1.0, open_lo=True, open_hi=True), 0.05),
        "budget": (_int(1), 400),
        "delta": (_float(0.0, 0.1, open_lo=True), toy_model.DEFAULT_SEED_AMPLITUDE),
        "threshold": (_float(0.0, 1.0, open_lo=True, open_hi=True), toy_model.DEFAULT_THRESHOLD),
        "t_max": (_float(0.0, open_lo=True), None),
        "samples": (_int(16), 4001),
        "time_budget": (_float(0.0, open_lo=True), 300.0),
    },
}


REPLAY_SAMPLES = 4097


def cmd_toy(args, raw) -> int:
    action = args.action
    cfg = validate(raw, TOY_SCHEMA[action])
    if action == "run":
        if cfg["b0"] is None:
            raise ConfigError("b0 is required")
        run = Run(args, "toy run", cfg)
        b0 = np.array(cfg["b0"])
        tr = toy_model.run_toy(b0, cfg["t_end"], cfg["samples"], cfg["rel_tol"], cfg["rel_tol"] * 1e-2)
        toy_model.write_toy_csv(run.path("toy.csv"), tr)
        m = np.array([toy_model.toy_mass(b) for b in tr.values])
        drift = float(np.max(np.abs(m - m[0])) / m[0]) if m[0] > 0 else 0.0
        residuals = {}
        if cfg["t_end"] > 0:
            # the replay is sampled densely so the finite-difference error stays below the tolerance
            dense = toy_model.run_toy(b0, cfg["t_end"], max(cfg["samples"], REPLAY_SAMPLES), cfg["rel_tol"], cfg["rel_tol"] * 1e-2)
            for lam in cfg["rescale"]:
                residuals[str(lam)] = toy_model.rhs_residual(toy_model.rescale_solution(dense, lam))
        ok = all(r <= cfg["residual_tol"] for r in residuals.values())
        run.say(f"mass drift {drift:.3e}; rescaling residuals {residuals}")
        return run.finish({"mass_drift": drift, "rescale_residuals": residuals}, ok)
    for k in ("N", "start", "end"):
        if cfg[k] is None:
            raise ConfigError(f"{k} is required")
    if not 1 <= cfg["start"] <= cfg["end"] <= cfg["N"]:
        raise ConfigError("need 1 <= start <= end <= N")
    run = Run(args, "toy slider", cfg)
    res = toy_model.slider_search(cfg["N"], cfg["start"], cfg["end"], cfg["eps"], cfg["budget"], cfg["delta"],
                                  cfg["threshold"], cfg["t_max"], cfg["samples"], time_budget=cfg["time_budget"])
    dump_json(_jsonable(res.to_json()), run.path("slider.json"))
    if res.T0 > 0:
        tr = toy_model.run_toy(res.b0, res.T0, 513, 1e-11, 1e-13)
        toy_model.write_toy_csv(run.path("toy.csv"), tr)
    run.say(f"transfer {res.achieved:.6f} of the mass into slot {res.end} at T0 = {res.T0:.4f}")
    return run.finish(res.to_json(), res.success)


CASCADE_SCHEMA = {
    "set": (_str, None),
    "N": (_int(3, 5), None),
    "potential": (_potential, "decaying"),
    "s": (_float(1.0, open_lo=True), 2.0),
    "lambda": (_float(0.0, open_lo=True), 16.0),
    "lambdas": (_float_list(0.0, 2), None),
    "eps": (_float(0.0, 1.0, open_lo=True, open_hi=True), 0.05),
    "start": (_int(1), None),
    "end": (_int(1), None),
    "dynamics": (_choice(*cascade.DYNAMICS), "truncated+J+quintic"),
    "rel_tol": (_float(0.0, open_lo=True), 1e-10),
    "abs_tol": (_float(0.0, open_lo=True), 1e-13),
    "samples": (_int(8), 512),
    "gamma_stride": (_int(1), 1),
    "slider_budget": (_int(1), 400),
    "exponent_range": (_float_list(None, 2), [-3.5, -2.5]),
}


def _experiment(cfg, lam) -> cascade.ExperimentConfig:
    S = _load_set(cfg, True)
    try:
        return cascade.ExperimentConfig(S, cfg["potential"], s=cfg["s"], lam=lam, eps=cfg["eps"], start=cfg["start"],
                                        end=cfg["end"], dynamics=cfg["dynamics"], rel_tol=cfg["rel_tol"],
                                        abs_tol=cfg["abs_tol"], samples=cfg["samples"], slider_budget=cfg["slider_budget"],
                                        gamma_stride=cfg["gamma_stride"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def cmd_cascade(args, raw) -> int:
    action = args.action
    cfg = validate(raw, CASCADE_SCHEMA)
    if action == "run":
        ec = _experiment(cfg, cfg["lambda"])
        run = Run(args, "cascade run", cfg)
        sysd = cascade.SetDynamics(ec.S, ec.V, ec.eta, ec.kappa0)
        series = cascade.approximation_experiment(ec, system=sysd)
        report = cascade.sobolev_growth_report(ec, series, sysd)
        zp = cascade.z_decomposition_probe(ec, series, system=sysd)
        extra = {"z_probe": zp, "command": "cascade run", "seed": args.seed}
        cascade.write_outputs(run.out, ec, series, report, extra, round(time.monotonic() - run.start, 3))
        for c in report["chain"]:
            run.say(f"{'ok  ' if c['holds'] else 'FAIL'} {c['name']}: {c['lhs']:.6g} vs {c['rhs']:.6g}")
        ok = not series.failed and series.within_bound and report["chain_holds"]
        run.say("PASS" if ok else "FAIL")
        return EXIT_OK if ok else EXIT_FAIL
    lams = cfg["lambdas"]
    if lams is None:
        raise ConfigError("lambdas is required for a sweep")
    lo, hi = sorted(cfg["exponent_range"][:2])
    ec = _experiment(cfg, lams[0])
    run = Run(args, "cascade sweep", cfg)
    sysd = cascade.SetDynamics(ec.S, ec.V, ec.eta, ec.kappa0)
    slider = toy_model.slider_search(ec.S.N, ec.start, ec.end, ec.eps, budget=ec.slider_budget)
    rows = []
    for lam in lams:
        ec = _experiment(cfg, lam)
        series = cascade.approximation_experiment(ec, slider, sysd)
        rows.append((lam, series.peak, series.bound, series.within_bound, series.failed))
        run.say(f"lambda {lam:g}: peak l1 deviation {series.peak:.6e} (bound {series.bound:.3e})")
    _write_csv(run.path("sweep.csv"), ["lambda", "peak_l1_dev", "bound"], [r[:3] for r in rows])
    exponent = cascade.scaling_exponent([r[0] for r in rows], [r[1] for r in rows]) if all(r[1] > 0 for r in rows) else None
    largest = max(rows, key=lambda r: r[0])
    ok = exponent is not None and lo <= exponent <= hi and largest[3] and not any(r[4] for r in rows)
    run.say(f"measured exponent {exponent}")
    return run.finish({"exponent": exponent, "rows": [list(r) for r in rows], "slider": slider.to_json()}, ok)


# ----------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (default: empty config)")
    common.add_argument("--seed", type=int, default=0, help="random seed (default: 0)")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--quiet", action="store_true", help="print nothing but errors")
    parser = argparse.ArgumentParser(prog="nlsgrowth", description="Energy-cascade numerics for cubic NLS on the 2-torus")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("resonance-scan", parents=[common], help="classify all 4-tuples of a square box")
    sub.add_parser("nf-check", parents=[common], help="check the normal-form cancellation on a box")
    for name, actions, text in (("lambda", ("build", "verify", "certify"), "generation sets"),
                                ("toy", ("run", "slider"), "toy model"),
                                ("cascade", ("run", "sweep"), "end-to-end experiment")):
        p = sub.add_parser(name, help=text)
        acts = p.add_subparsers(dest="action", required=True)
        for a in actions:
            acts.add_parser(a, parents=[common])
    return parser


COMMANDS = {"resonance-scan": cmd_resonance_scan, "nf-check": cmd_nf_check, "lambda": cmd_lambda,
            "toy": cmd_toy, "cascade": cmd_cascade}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        raw = {}
        if args.config:
            try:
                with open(args.config) as fh:
                    raw = json.load(fh)
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config: {exc}") from None
        return COMMANDS[args.command](args, raw)
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
