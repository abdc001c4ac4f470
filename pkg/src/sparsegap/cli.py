"""Command-line entry point: ``sparsegap <subcommand> [flags]``.

Exit codes: 0 on success, 1 on a domain error (the error class name is
printed on stderr), 2 on a usage error. Files are never overwritten
without ``--force``.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ._seeding import MAX_SEED, derive_rng, derive_seed
from .errors import SparseGapError
from .estimators import DEFAULT_SUPPORT_BUDGET, ESTIMATORS, RegressionProblem, get_estimator, l0_estimate
from .experiments import (
    build_pprime_response,
    gap_experiment,
    reduction_params,
    sample_segment,
    sample_theta_star,
    segment_slice,
)
from .hard_design import HardDesign, HardDesignParams, build_hard_design
from .re_cond import DEFAULT_RESTARTS, check_normalization, re_upper_bound
from .x3c import (
    ExactCover,
    X3CInstance,
    build_cover_matrix,
    build_response,
    random_instance,
    solve_x3c_bruteforce,
    solve_x3c_via_regression,
)


def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value <= MAX_SEED:
        raise argparse.ArgumentTypeError(f"seed must lie in 0..2^64-1, got {text}")
    return value


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _write(path: Optional[str], text: str, force: bool) -> None:
    if path is None:
        sys.stdout.write(text)
        return
    target = Path(path)
    if target.exists() and not force:
        raise FileExistsError(f"{target} exists; pass --force to overwrite")
    target.parent.mkdir(parents=True, exist_ok=True)
    with open(target, "w", newline="\n") as fh:
        fh.write(text)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


def load_matrix(path: str) -> np.ndarray:
    """A design directory, a ``.npy`` file, or a comma-separated text matrix."""
    p = Path(path)
    if p.is_dir():
        return HardDesign.load(p).X
    if p.suffix == ".npy":
        return np.load(p)
    if p.suffix == ".json":
        return np.asarray(json.loads(p.read_text())["X"], dtype=np.float64)
    return np.atleast_2d(np.loadtxt(p, delimiter=",", dtype=np.float64))


def _load_instance(path: str) -> X3CInstance:
    return X3CInstance.from_json(Path(path).read_text())


def cmd_gen_x3c(args) -> int:
    inst, cover = random_instance(args.m, derive_rng(args.seed, "gen-x3c"), plant_cover=args.plant_cover,
                                  extra=args.extra)
    data = json.loads(inst.to_json())
    data["planted_cover"] = None if cover is None else sorted(cover.selected)
    data["generator"] = {"seed": args.seed, "plant_cover": args.plant_cover, "extra": args.extra}
    _write(args.out, _dump(data), args.force)
    return 0


def cmd_build_m(args) -> int:
    M = build_cover_matrix(args.m)
    if args.instance:
        inst = _load_instance(args.instance)
        if inst.m != args.m:
            raise SystemExit(f"--m {args.m} does not match the instance ground set {inst.m}")
        y = build_response(inst)
    else:
        y = None
    if args.format == "json":
        body = {"m": M.m, "p": M.p, "M": M.entries.tolist(), "y": None if y is None else y.tolist()}
        _write(args.out, _dump(body), args.force)
    else:
        _write(args.out, M.to_csv(), args.force)
        if y is not None:
            y_text = "".join(repr(float(v)) + "\n" for v in y)
            _write(args.y_out, y_text, args.force) if args.y_out else sys.stdout.write(y_text)
    return 0


def cmd_solve_x3c(args) -> int:
    inst = _load_instance(args.instance)
    if args.oracle == "brute":
        cover = solve_x3c_bruteforce(inst, budget=args.budget)
    else:
        cover = solve_x3c_via_regression(inst, lambda prob: l0_estimate(prob, budget=args.budget))
    body = {
        "oracle": args.oracle,
        "feasible": cover is not None,
        "cover": None if cover is None else sorted(cover.selected),
        "positions": None if cover is None else cover.positions(inst),
        "triples": None if cover is None else [list(t) for t in cover.triples(inst.m)],
    }
    _write(args.out, _dump(body), args.force)
    return 0


def _load_problem(path: str) -> RegressionProblem:
    data = json.loads(Path(path).read_text())
    return RegressionProblem(X=np.asarray(data["X"], dtype=np.float64), y=np.asarray(data["y"], dtype=np.float64),
                             sigma=float(data["sigma"]), k=int(data["k"]))


def cmd_estimate(args) -> int:
    prob = _load_problem(args.problem)
    if args.method == "l0":
        est = l0_estimate(prob, budget=args.budget)
    else:
        est = get_estimator(args.method)(prob)
    body = json.loads(est.to_json())
    body.update({"method": args.method, "converged": est.converged, "iterations": est.iterations})
    if "lambda" in est.meta:
        body["lambda"] = est.meta["lambda"]
    _write(args.out, _dump(body), args.force)
    return 0


def cmd_re_estimate(args) -> int:
    X = load_matrix(args.matrix)
    est = re_upper_bound(X, args.k, restarts=args.restarts, seed=args.seed)
    _write(args.out, est.to_json() + "\n", args.force)
    return 0


def cmd_check_norm(args) -> int:
    X = load_matrix(args.matrix)
    result = check_normalization(X, args.k, mode=args.mode, seed=args.seed)
    body = {"passed": result.passed, "worst_ratio": result.worst_ratio, "k": args.k, "mode": args.mode,
            "seed": args.seed}
    _write(args.out, _dump(body), args.force)
    return 0 if result.passed or not args.strict else 1


def cmd_build_design(args) -> int:
    params = HardDesignParams(m=args.m, t=args.t, d=args.d, n=args.n, gamma_target=args.gamma, l=args.l,
                              epsilon_bar=args.epsilon_bar, seed=args.seed, strict_range=not args.relaxed)
    design = build_hard_design(params, attempts=args.attempts, restarts=args.restarts)
    design.save(args.out, force=args.force)
    summary = {"out": str(args.out), "gamma_hat": design.gamma_hat, "x_calibrated": design.x_calibrated,
               "R_seed": design.R_seed, "normalization_ratio": design.normalization_ratio}
    sys.stdout.write(_dump(summary))
    return 0


def cmd_gap(args) -> int:
    report = gap_experiment(args.m, args.t, args.n, args.d, args.gammas, args.sigma, args.trials, args.seed,
                            l=args.l, epsilon_bar=args.epsilon_bar, theta_samples=args.theta_samples,
                            restarts=args.restarts, timings=args.timings, skip_failed=not args.strict)
    for entry in report.metadata["failed_gammas"]:
        print(f"{entry['error']}: gamma {entry['gamma']!r} skipped: {entry['message']}", file=sys.stderr)
    if args.format == "json":
        _write(args.out, report.to_json(), args.force)
    else:
        _write(args.out, report.to_csv(), args.force)
        if args.out is not None:
            _write(str(args.out) + ".json", report.metadata_json(), args.force)
    return 0


def cmd_pprime_demo(args) -> int:
    design = HardDesign.load(args.design)
    rp = reduction_params(design, args.sigma)
    theta_tilde = sample_theta_star(design, rp.rho, derive_seed(args.seed, "advice"))
    _, cover, u = sample_segment(design.params.m, derive_rng(args.seed, "replacement"))
    theta_bar = theta_tilde.replace_segment(args.segment, rp.rho * u)
    y = build_pprime_response(design, theta_bar, theta_tilde, args.sigma, args.segment, args.seed)
    sl = segment_slice(design.params, args.segment)
    body = {
        "segment": args.segment,
        "sigma": args.sigma,
        "seed": args.seed,
        "r": rp.r,
        "rho": rp.rho,
        "segment_distance": float(np.linalg.norm(theta_bar.theta[sl] - theta_tilde.theta[sl])),
        "theta_bar": [float(v) for v in theta_bar.theta],
        "theta_tilde": [float(v) for v in theta_tilde.theta],
        "replacement_cover": sorted(cover.selected),
        "y": [float(v) for v in y],
    }
    _write(args.out, _dump(body), args.force)
    return 0


def _output_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", help="output path (stdout when omitted)")
    p.add_argument("--force", action="store_true", help="overwrite existing outputs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sparsegap", description="Hard sparse-regression designs and experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-x3c", help="random exact-cover instance")
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--plant-cover", action="store_true")
    p.add_argument("--extra", type=int, default=None, help="random triples beyond the planted cover (default m)")
    p.add_argument("--seed", type=_seed, required=True)
    _output_flags(p)
    p.set_defaults(func=cmd_gen_x3c)

    p = sub.add_parser("build-m", help="emit the cover matrix and, given an instance, its response")
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--instance")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--y-out", help="response output path in csv format")
    _output_flags(p)
    p.set_defaults(func=cmd_build_m)

    p = sub.add_parser("solve-x3c", help="find an exact cover")
    p.add_argument("--instance", required=True)
    p.add_argument("--oracle", choices=("brute", "l0"), default="brute")
    p.add_argument("--budget", type=int, default=DEFAULT_SUPPORT_BUDGET)
    _output_flags(p)
    p.set_defaults(func=cmd_solve_x3c)

    p = sub.add_parser("estimate", help="fit a sparse estimator to a JSON problem {X, y, sigma, k}")
    p.add_argument("--problem", required=True)
    p.add_argument("--method", choices=sorted(ESTIMATORS), required=True)
    p.add_argument("--budget", type=int, default=DEFAULT_SUPPORT_BUDGET, help="support budget for l0")
    _output_flags(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("re-estimate", help="upper bound on the restricted eigenvalue constant")
    p.add_argument("--matrix", required=True, help="design directory, .npy, .json or csv file")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--restarts", type=int, default=DEFAULT_RESTARTS)
    p.add_argument("--seed", type=_seed, required=True)
    _output_flags(p)
    p.set_defaults(func=cmd_re_estimate)

    p = sub.add_parser("check-norm", help="check ||X theta||^2 / n <= ||theta||^2 on 2k-sparse theta")
    p.add_argument("--matrix", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--mode", choices=("exact", "sampled"), default="exact")
    p.add_argument("--seed", type=_seed, required=True)
    p.add_argument("--strict", action="store_true", help="exit 1 when the check fails")
    _output_flags(p)
    p.set_defaults(func=cmd_check_norm)

    p = sub.add_parser("build-design", help="calibrated, quantized hard design written to a directory")
    for name in ("m", "t", "n", "d", "l"):
        p.add_argument(f"--{name}", type=int, required=True)
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--epsilon-bar", type=float, default=1e-6)
    p.add_argument("--attempts", type=int, default=50)
    p.add_argument("--restarts", type=int, default=DEFAULT_RESTARTS)
    p.add_argument("--relaxed", action="store_true", help="allow targets at or above 1/(24 sqrt 2)")
    p.add_argument("--seed", type=_seed, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_build_design)

    p = sub.add_parser("gap", help="l0 versus thresholded Lasso on hard designs")
    for name in ("m", "t", "n", "d"):
        p.add_argument(f"--{name}", type=int, required=True)
    p.add_argument("--gammas", type=_floats, required=True)
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--trials", type=int, required=True)
    p.add_argument("--l", type=int, default=30)
    p.add_argument("--epsilon-bar", type=float, default=1e-6)
    p.add_argument("--theta-samples", type=int, default=5)
    p.add_argument("--restarts", type=int, default=DEFAULT_RESTARTS)
    p.add_argument("--timings", action="store_true", help="record wall-clock runtimes in the CSV")
    p.add_argument("--strict", action="store_true", help="fail instead of skipping targets with no valid design")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--seed", type=_seed, required=True)
    _output_flags(p)
    p.set_defaults(func=cmd_gap)

    p = sub.add_parser("pprime-demo", help="response mixing two regression vectors across the halves")
    p.add_argument("--design", required=True)
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--segment", type=int, default=0, help="0-based segment index")
    p.add_argument("--seed", type=_seed, required=True)
    _output_flags(p)
    p.set_defaults(func=cmd_pprime_demo)
    return parser


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except SparseGapError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except (FileExistsError, FileNotFoundError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:
        print(exc.code, file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
