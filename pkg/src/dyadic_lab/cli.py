"""Command line front end: ``dyadic-lab {a2,build-shift,verify,sweep,decompose,report}``.

Exit codes: 0 success, 1 a check failed, 2 usage or configuration error.
"""

import argparse
import copy
import csv
import io
import json
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .corona import (
    build_stopping_cubes,
    carleson_check,
    check_forest,
    corona_diagnostics,
    decompose_form,
)
from .exceptions import DyadicLabError
from .grid import FiniteModel, Measure, StepFunction
from .martingale import MartingaleLadder, bessel_gap, complexity_identity_defect, decompose, difference_energies
from .shift import axiom_report, separate, unconditionality_check, write_matrix, assemble_matrix
from .verify import (
    a2_sweep,
    build_shift,
    build_weight,
    duality_check,
    fit_slope,
    lemma_li_ratios,
    rows_from_csv,
    rows_to_csv,
    weighted_norm,
)
from .weights import Weight, a2_constant

logger = logging.getLogger("dyadic_lab")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
SEED_ENV = "DYADIC_LAB_SEED"

CHECKS = (
    "decomposition",
    "martingale",
    "complexity",
    "stopping",
    "carleson",
    "corona",
    "axioms",
    "lemma",
    "duality",
)
TOLERANCES = {
    "decomposition": 1e-10,
    "martingale": 1e-10,
    "bessel": 1e-12,
    "complexity": 1e-12,
    "carleson": 64.0,
    "axioms": 1e-9,
    "duality": 1e-9,
}


class UsageError(Exception):
    """Bad flags or configuration (exit code 2)."""


# -- configuration ----------------------------------------------------------------


@dataclass
class ExperimentConfig:
    model: dict = field(default_factory=lambda: {"d": 1, "N": 8})
    shift: dict = field(default_factory=lambda: {"type": "petermichl"})
    weights: dict = field(default_factory=lambda: {"family": "power", "params": [-0.5]})
    checks: list = field(default_factory=lambda: list(CHECKS))
    seeds: list = field(default_factory=lambda: [0])
    output: str = "dyadic_lab_out"
    a2_min: float = 10.0
    max_slope: float = None

    def validate(self):
        unknown = [c for c in self.checks if c not in CHECKS]
        if unknown:
            raise UsageError(f"unknown checks {unknown}; choose from {list(CHECKS)}")
        if not self.seeds or not all(isinstance(s, int) and not isinstance(s, bool) for s in self.seeds):
            raise UsageError("seeds must be a nonempty list of integers")
        try:
            FiniteModel(int(self.model["d"]), int(self.model["N"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise UsageError(f"bad model {self.model}: {exc}") from exc
        if not isinstance(self.weights.get("params", []), list):
            raise UsageError("weights.params must be a list")
        return self

    @property
    def finite_model(self):
        return FiniteModel(int(self.model["d"]), int(self.model["N"]))

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data):
        known = {f for f in cls.__dataclass_fields__}
        extra = set(data) - known
        if extra:
            raise UsageError(f"unknown config fields {sorted(extra)}")
        return cls(**copy.deepcopy(data)).validate()

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def load_config(args):
    """Config file (or defaults), then flag overrides, then the seed variable."""
    data = {}
    if getattr(args, "config", None):
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(data, dict):
            raise UsageError("config must be a JSON object")
    cfg = ExperimentConfig.from_dict(data)
    if getattr(args, "d", None) is not None:
        cfg.model["d"] = args.d
    if getattr(args, "N", None) is not None:
        cfg.model["N"] = args.N
    if getattr(args, "output", None):
        cfg.output = args.output
    if getattr(args, "checks", None):
        cfg.checks = [c.strip() for c in args.checks.split(",") if c.strip()]
    if getattr(args, "seed", None) is not None:
        cfg.seeds = [args.seed]
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            cfg.seeds = [int(env)]
        except ValueError as exc:
            raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from exc
        for part in (cfg.shift, cfg.weights):
            if "seed" in part:
                part["seed"] = cfg.seeds[0]
    return cfg.validate()


def prepare_output(path):
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise UsageError(f"output directory {out} is not writable: {exc}") from exc
    return out


# -- weights from flags -------------------------------------------------------------


def _parse_explicit(text):
    try:
        return [float(x) for x in text.split(",")]
    except ValueError as exc:
        raise UsageError(f"--explicit needs comma separated numbers, got {text!r}") from exc


def weight_from_args(args, model):
    if args.weight_file:
        try:
            weight = Weight.from_json(Path(args.weight_file).read_text())
        except (OSError, json.JSONDecodeError, KeyError) as exc:
            raise UsageError(f"cannot read weight file: {exc}") from exc
        if weight.model != model:
            raise UsageError(f"weight file is on {weight.model}, flags say {model}")
        return weight
    if args.explicit is not None:
        return Weight(model, _parse_explicit(args.explicit))
    if args.family == "power":
        return build_weight({"family": "power"}, args.alpha, model)
    return build_weight({"family": "cascade", "seed": args.seed or 0}, args.target, model)


def _add_model_flags(p, default_N=None):
    p.add_argument("--d", type=int, default=None if default_N is None else 1, help="dimension (1-3)")
    p.add_argument("--N", type=int, default=default_N, help="depth of the model")


def _add_weight_flags(p):
    p.add_argument("--family", choices=["power", "cascade"], default="power")
    p.add_argument("--alpha", type=float, default=0.0, help="power weight exponent")
    p.add_argument("--target", type=float, default=10.0, help="cascade A2 target")
    p.add_argument("--explicit", default=None, help="comma separated leaf values")
    p.add_argument("--weight-file", default=None, help="weight JSON file")


def _add_shift_flags(p):
    p.add_argument("--type", dest="shift_type", choices=["petermichl", "haar_multiplier", "random"],
                   default="petermichl")
    p.add_argument("--m", type=int, default=1)
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--residue", type=int, default=None)


def _shift_descriptor(args):
    return {"type": args.shift_type, "m": args.m, "n": args.n, "residue": args.residue,
            "seed": args.seed or 0}


# -- subcommands ----------------------------------------------------------------------


def cmd_a2(args):
    model = FiniteModel(args.d, args.N)
    report = a2_constant(weight_from_args(args, model))
    print(report.to_json())
    return EXIT_OK


def cmd_build_shift(args):
    model = FiniteModel(args.d, args.N)
    shift = build_shift(_shift_descriptor(args), model)
    text = shift.to_json()
    if args.output:
        Path(args.output).write_text(text)
    if args.matrix:
        write_matrix(args.matrix, assemble_matrix(shift))
    summary = {"kind": shift.kind, "kappa": shift.kappa, "residue": shift.residue,
               "blocks": len(shift), "d": model.d, "N": model.N}
    print(json.dumps(summary) if args.output else text)
    return EXIT_OK


def cmd_decompose(args):
    model = FiniteModel(args.d, args.N)
    shift = build_shift(_shift_descriptor(args), model)
    weight = weight_from_args(args, model)
    rng = np.random.default_rng(args.seed or 0)
    f = StepFunction(model, rng.standard_normal(model.n_leaves))
    g = StepFunction(model, rng.standard_normal(model.n_leaves))
    report = decompose_form(shift, f, g, weight, strict=False)
    tol = TOLERANCES["decomposition"] * (1 + abs(report.total))
    out = dict(report.to_dict(), defect=report.defect, u_defect=report.u_defect, tolerance=tol)
    print(json.dumps(out))
    return EXIT_OK if report.defect <= tol and report.u_defect <= tol else EXIT_FAIL


def _instance(cfg, seed):
    model = cfg.finite_model
    shift_desc = dict(cfg.shift)
    shift_desc.setdefault("seed", seed)
    shift = build_shift(shift_desc, model)
    params = cfg.weights.get("params") or [0.0]
    fam = dict(cfg.weights, seed=cfg.weights.get("seed", seed))
    weight = build_weight(fam, params[seed % len(params)], model)
    rng = np.random.default_rng(seed)
    f = StepFunction(model, rng.standard_normal(model.n_leaves))
    g = StepFunction(model, rng.standard_normal(model.n_leaves))
    return model, shift, weight, f, g


def _separated(shift):
    return shift if shift.is_separated else separate(shift, 0)


def _run_check(name, model, shift, weight, f, g):
    """Return ``(passed, measured, tolerance)``."""
    if name == "decomposition":
        rep = decompose_form(shift, f, g, weight, strict=False)
        measured = max(rep.defect, rep.u_defect) / (1 + abs(rep.total))
        return measured <= TOLERANCES[name], measured, TOLERANCES[name]
    if name == "martingale":
        sigma = weight.sigma_measure
        ladder = MartingaleLadder(sigma, shift.kappa)
        dec = decompose(f, ladder)
        energy = float(np.sum(f.values ** 2 * weight.sigma) * model.leaf_volume)
        recon = float(np.max(np.abs(dec.reconstruct().values - f.values)))
        pieces = [dec.coarse.values, dec.refinement.values]
        parts = sum(float(np.sum(p ** 2 * weight.sigma) * model.leaf_volume) for p in pieces)
        parseval = abs(energy - parts - difference_energies(f.values, ladder)) / energy
        gap = bessel_gap(f, ladder) / energy
        measured = max(recon, parseval)
        ok = measured <= TOLERANCES[name] and gap >= -TOLERANCES["bessel"]
        return ok, {"reconstruction": recon, "parseval": parseval, "bessel_gap": gap}, TOLERANCES[name]
    if name == "complexity":
        measured = max(complexity_identity_defect(shift, f.values, weight.sigma_measure),
                       complexity_identity_defect(shift, f.values, Measure.lebesgue(model)))
        return measured <= TOLERANCES[name], measured, TOLERANCES[name]
    if name == "stopping":
        forest = build_stopping_cubes(f, weight, shift.kappa)
        res = check_forest(forest, f, weight)
        keys = ["partition", "covered", "corona_bound", "minimal_owner", "parent_threshold", "rho_is_average"]
        return all(res[k] for k in keys), res, "exact"
    if name == "carleson":
        forest = build_stopping_cubes(f, weight, shift.kappa)
        res = carleson_check(forest, f, weight)
        return res["packing"] <= TOLERANCES[name], res, TOLERANCES[name]
    if name == "corona":
        sep = _separated(shift)
        forest = build_stopping_cubes(f, weight, sep.kappa, sep.residue)
        res = corona_diagnostics(sep, f, weight, forest)
        return bool(res["expansion_holds"]), res, TOLERANCES["decomposition"]
    if name == "axioms":
        rep = axiom_report(shift)
        measured = dict(rep)
        ok = rep["sup_ratio"] <= 1 + TOLERANCES[name] and rep["rectangle_defect"] == 0 and rep["support_defect"] == 0
        if shift.kind in ("petermichl", "haar_multiplier"):
            measured["unconditionality"] = unconditionality_check(shift, samples=10)
            ok = ok and measured["unconditionality"] <= 1 + TOLERANCES[name]
        return ok, measured, TOLERANCES[name]
    if name == "lemma":
        sep = _separated(shift)
        res = lemma_li_ratios(sep, weight, model.root, subcollections=10)
        return math.isfinite(res["r1_max"]) and math.isfinite(res["r2_max"]), res, "finite"
    if name == "duality":
        norm = weighted_norm(shift, weight).value
        measured = duality_check(shift, weight) / max(norm, 1e-300)
        return measured <= TOLERANCES[name], measured, TOLERANCES[name]
    raise UsageError(f"unknown check {name}")  # pragma: no cover


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        return float(x) if math.isfinite(x) else None
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def cmd_verify(args):
    cfg = load_config(args)
    out = prepare_output(cfg.output)
    results = []
    for name in cfg.checks:
        entry = {"check": name, "passed": True, "instances": []}
        for seed in cfg.seeds:
            model, shift, weight, f, g = _instance(cfg, seed)
            try:
                ok, measured, tol = _run_check(name, model, shift, weight, f, g)
            except DyadicLabError as exc:
                ok, measured, tol = False, f"{type(exc).__name__}: {exc}", None
            entry["instances"].append({"seed": seed, "passed": bool(ok), "measured": measured, "tolerance": tol})
            entry["passed"] = entry["passed"] and bool(ok)
        results.append(entry)
        logger.info("%s: %s", name, "pass" if entry["passed"] else "FAIL")
    all_ok = all(r["passed"] for r in results)
    report = {"config": cfg.to_dict(), "passed": all_ok, "checks": results}
    (out / "report.json").write_text(json.dumps(_jsonable(report), indent=2, sort_keys=True) + "\n")
    for r in results:
        print(f"{r['check']}: {'pass' if r['passed'] else 'FAIL'}")
    return EXIT_OK if all_ok else EXIT_FAIL


def write_plot(rows, fit, path):
    """Static log-log scatter of norm against a2 with the fitted line."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "dyadic-lab"
    pts = [(r.a2, r.norm) for r in rows if math.isfinite(r.a2) and math.isfinite(r.norm) and r.norm > 0]
    fig, ax = plt.subplots(figsize=(5, 4))
    if pts:
        a2, nv = np.array(pts).T
        ax.loglog(a2, nv, "o", label="measured")
        if fit:
            xs = np.geomspace(a2.min(), a2.max(), 50)
            ax.loglog(xs, np.exp(fit["intercept"]) * xs ** fit["slope"], "-",
                      label=f"slope {fit['slope']:.3f}")
        ax.legend()
    ax.set_xlabel("A2 constant")
    ax.set_ylabel("weighted norm")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def cmd_sweep(args):
    cfg = load_config(args)
    params = cfg.weights.get("params", [])
    if not params:
        raise UsageError("weights.params is empty")
    out = prepare_output(cfg.output)
    seed = cfg.seeds[0]
    shift_desc = dict(cfg.shift)
    shift_desc.setdefault("seed", seed)
    weight_desc = dict(cfg.weights)
    weight_desc.setdefault("seed", seed)
    weight_desc.pop("params", None)
    jobs = args.jobs if args.jobs else (os.cpu_count() or 1)
    rows = a2_sweep(shift_desc, weight_desc, params, cfg.finite_model, jobs=jobs)
    (out / "sweep.csv").write_text(rows_to_csv(rows))
    failed = [r for r in rows if r.error]
    a2_min = args.a2_min if args.a2_min is not None else cfg.a2_min
    try:
        fit = fit_slope(rows, a2_min)
    except ValueError as exc:
        logger.warning("no fit: %s", exc)
        fit = None
    report = {"config": cfg.to_dict(), "a2_min": a2_min, "fit": fit,
              "rows": [dict(zip(["param", "a2", "norm", "kappa", "d", "N", "shift_id", "seed", "residual"],
                                [r.weight_param, r.a2, r.norm, r.kappa, r.d, r.depth, r.shift_id, r.seed,
                                 r.residual]), error=r.error) for r in rows]}
    (out / "fit.json").write_text(json.dumps(_jsonable(report), indent=2, sort_keys=True) + "\n")
    write_plot(rows, fit, out / "plot.svg")
    print(json.dumps(_jsonable(fit)) if fit else "fit: not enough rows")
    if failed:
        for r in failed:
            print(f"row {r.weight_param}: {r.error}", file=sys.stderr)
        return EXIT_FAIL
    if cfg.max_slope is not None and (fit is None or fit["slope"] > cfg.max_slope):
        return EXIT_FAIL
    return EXIT_OK


def cmd_report(args):
    src = Path(args.input)
    if not src.is_dir():
        raise UsageError(f"{src} is not a directory")
    status = EXIT_OK
    found = False
    if (src / "report.json").exists():
        found = True
        rep = json.loads((src / "report.json").read_text())
        for c in rep.get("checks", []):
            print(f"{c['check']}: {'pass' if c['passed'] else 'FAIL'}")
        if not rep.get("passed", False):
            status = EXIT_FAIL
    if (src / "sweep.csv").exists():
        found = True
        rows = rows_from_csv((src / "sweep.csv").read_text())
        try:
            fit = fit_slope(rows, args.a2_min)
        except ValueError:
            fit = None
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        for r in rows:
            writer.writerow([r.weight_param, f"{r.a2:.6g}", f"{r.norm:.6g}"])
        print("param,a2,norm")
        print(buf.getvalue(), end="")
        if fit:
            print(f"slope {fit['slope']:.4f} (r2 {fit['r2']:.4f}, {fit['n']} rows with a2 >= {args.a2_min})")
        write_plot(rows, fit, src / "plot.svg")
    if not found:
        raise UsageError(f"{src} has neither report.json nor sweep.csv")
    return status


# -- entry point ------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="dyadic-lab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("a2", help="dyadic A2 constant of a weight")
    _add_model_flags(p, default_N=8)
    _add_weight_flags(p)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_a2)

    p = sub.add_parser("build-shift", help="build a Haar shift and write it as JSON")
    _add_model_flags(p, default_N=8)
    _add_shift_flags(p)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--output", default=None, help="shift JSON path (stdout if omitted)")
    p.add_argument("--matrix", default=None, help="also write the dense matrix in binary form")
    p.set_defaults(func=cmd_build_shift)

    p = sub.add_parser("decompose", help="split the weighted bilinear form of a shift")
    _add_model_flags(p, default_N=8)
    _add_shift_flags(p)
    _add_weight_flags(p)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_decompose)

    for name, func, helptext in (("verify", cmd_verify, "run invariant checks, write report.json"),
                                 ("sweep", cmd_sweep, "A2 sweep, write sweep.csv, fit.json, plot.svg")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", default=None, help="experiment config (JSON)")
        _add_model_flags(p)
        p.add_argument("--output", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--jobs", type=int, default=None, help="worker processes (default: all CPUs)")
        if name == "verify":
            p.add_argument("--checks", default=None, help=f"comma separated subset of {','.join(CHECKS)}")
        else:
            p.add_argument("--a2-min", type=float, default=None)
        p.set_defaults(func=func)

    p = sub.add_parser("report", help="summarise an output directory and redraw its plot")
    p.add_argument("input", help="directory written by verify or sweep")
    p.add_argument("--a2-min", type=float, default=10.0)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "jobs", None) is not None and args.jobs < 1:
        parser.error("--jobs must be >= 1")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"dyadic-lab: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DyadicLabError, ValueError, TypeError, KeyError) as exc:
        print(f"dyadic-lab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
