"""Command-line entry point.

Exit codes: 0 success, 1 invalid input, 2 numerical failure, 3 a checked
inequality was violated while its hypothesis held.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .designs import Design, generate_ground_truth, read_observations, sample_observations, write_observations
from .errors import NumericalError, ShortfallError, TraceRegError
from .estimators import (SolverConfig, estimate_completion, objective, oracle_rhs, select_lambda, slow_rate_rhs,
                         solve_penalized)
from .lasso import LinearDesign, check_sharp_oracle, read_regression_csv
from .linalg import read_matrix, svd, write_matrix
from .lowerbound import PackingConfig, build_packing, kl_condition, largest_gamma, verify_packing
from .rng import derive_seed
from .spectral_rank import RankRecoveryConfig, check_rank_theorem, scale_to_signal
from .stochastic import TailScenario, tail_verify

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL, EXIT_VIOLATION = 0, 1, 2, 3


class CheckViolation(Exception):
    pass


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _model_flags(p: argparse.ArgumentParser, n_default: int | None = 2000) -> None:
    p.add_argument("--m1", type=int, default=30)
    p.add_argument("--m2", type=int, default=30)
    p.add_argument("--rank", type=int, default=2)
    p.add_argument("--a", type=float, default=1.0, help="entry bound of the ground truth")
    p.add_argument("--n", type=int, default=n_default)
    p.add_argument("--sigma", type=float, default=0.5)
    p.add_argument("--alpha", type=float, default=2.0)
    p.add_argument("--eta", type=float, default=1.0)
    p.add_argument("--noise", choices=["gaussian", "subexp", "bounded", "none"], default="gaussian")
    p.add_argument("--seed", type=int, default=0)


def _lambda_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lambda-rule", choices=["oracle", "theory-gaussian", "theory-bounded", "explicit", "fixed"],
                   default="oracle")
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--cstar", type=float, default=4.0, help="multiplier C_* in the theoretical rules")
    p.add_argument("--t", type=float, default=None, help="confidence parameter; default log(m1+m2)")


def _trial_config(args, n: int | None = None) -> ex.TrialConfig:
    return ex.TrialConfig(m1=args.m1, m2=args.m2, rank=args.rank, n=args.n if n is None else n, a=args.a,
                          noise=args.noise, sigma=args.sigma, alpha=args.alpha, eta=args.eta,
                          lambda_rule=args.lambda_rule, lam=args.lam, C_star=args.cstar, t=args.t)


def _check_records(records) -> None:
    bad = [r.trial for r in records if r.violates]
    if bad:
        raise CheckViolation(f"oracle inequality violated with lambda >= 2||M|| in trials {bad[:10]}")


def cmd_simulate(args) -> int:
    cfg = _trial_config(args)
    A0 = generate_ground_truth(cfg.m1, cfg.m2, cfg.rank, cfg.a, derive_seed(args.seed, 0))
    obs = sample_observations(A0, Design.usr(cfg.m1, cfg.m2), cfg.noise_model(), cfg.n, derive_seed(args.seed, 1))
    write_observations(args.out, obs)
    if args.truth:
        write_matrix(args.truth, A0)
    return EXIT_OK


def cmd_estimate(args) -> int:
    obs = read_observations(args.obs)
    A0 = read_matrix(args.truth) if args.truth else None
    # only the lambda rule is used here; a is clipped so a bounded-noise config validates
    a = min(args.a, args.eta) if args.noise == "bounded" else args.a
    cfg = ex.TrialConfig(m1=obs.shape[0], m2=obs.shape[1], rank=1, n=obs.n, a=a, noise=args.noise,
                         sigma=args.sigma, alpha=args.alpha, eta=args.eta, lambda_rule=args.lambda_rule,
                         lam=args.lam, C_star=args.cstar, t=args.t)
    lam = select_lambda(cfg.rule(), obs, A0)
    if obs.design.is_completion:
        A_hat, iterations = estimate_completion(obs, lam), 0
    else:
        A_hat, info = solve_penalized(obs, lam, SolverConfig(max_iters=args.max_iters), return_info=True)
        iterations = info.iterations
    write_matrix(args.out, A_hat)
    sidecar = {"lambda": lam, "rule": args.lambda_rule, "iterations": iterations,
               "objective": objective(A_hat, obs, lam), "rank": svd(A_hat).numerical_rank}
    Path(str(args.out) + ".json").write_text(json.dumps(sidecar, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_rate_sweep(args) -> int:
    grid = args.n_grid or [args.n]
    records = ex.rate_sweep(_trial_config(args, grid[0]), grid, args.trials, args.seed, args.jobs)
    out = Path(args.out)
    out.write_text(ex.records_to_csv(records))
    out.with_suffix(".dat").write_text(ex.format_dat(ex.summarize(records)))
    if len(set(grid)) >= 3:
        fit = ex.fit_rate(records)
        print(f"slope {fit.slope:.4f} intercept {fit.intercept:.4f} r2 {fit.r2:.4f}")
    _check_records(records)
    return EXIT_OK


def cmd_rank_recovery(args) -> int:
    cfg = _trial_config(args)
    noise = cfg.noise_model()
    rows, verdicts, recovered = [], [], 0
    for k in range(args.trials):
        seed = derive_seed(args.seed, k)
        A0 = generate_ground_truth(cfg.m1, cfg.m2, cfg.rank, cfg.a, derive_seed(seed, 0))
        if args.no_scale:
            obs = sample_observations(A0, Design.usr(cfg.m1, cfg.m2), noise, cfg.n, derive_seed(seed, 1))
            scale = 1.0
            lam = select_lambda(cfg.rule(), obs, A0)
        else:
            A0, obs, lam, scale = scale_to_signal(A0, noise, cfg.n, derive_seed(seed, 1), args.delta)
        rcfg = RankRecoveryConfig(base_lambda=lam, delta=args.delta)
        v = check_rank_theorem(A0, obs, rcfg)
        recovered += v.r_hat == v.rank_true
        d = v.to_dict()
        d.update(trial=k, seed=seed, scale=scale, lambda_prime=rcfg.lambda_prime, consistent=v.consistent)
        verdicts.append(d)
        rows.append(ex.ExperimentRecord(
            trial=k, m1=cfg.m1, m2=cfg.m2, n=cfg.n, rank_true=v.rank_true, lambda_=rcfg.lambda_prime,
            lambda_rule=args.lambda_rule, frob_err_sq_norm=v.frob_err_sq / (cfg.m1 * cfg.m2), rank_hat=v.r_hat,
            oracle_rhs_fast=oracle_rhs(A0, rcfg.lambda_prime, math.sqrt(cfg.m1 * cfg.m2), "fast"),
            oracle_rhs_slow=slow_rate_rhs(A0, rcfg.lambda_prime, obs.design), m_norm=v.m_norm, bound_m=cfg.bound_m(), seed=seed))
    out = Path(args.out)
    out.write_text(ex.records_to_csv(rows))
    with open(str(out) + ".verdicts.jsonl", "w") as fh:
        for d in verdicts:
            fh.write(json.dumps(d, sort_keys=True) + "\n")
    print(f"recovered {recovered}/{args.trials}")
    bad = [d["trial"] for d in verdicts if not d["consistent"]]
    if bad:
        raise CheckViolation(f"rank recovery guarantee violated in trials {bad[:10]}")
    return EXIT_OK


def cmd_bernstein(args) -> int:
    kind = {"bounded": "learning"}.get(args.noise, args.noise)
    sc = TailScenario(kind=kind, m1=args.m1, m2=args.m2, n=args.n, rank=args.rank, a=args.a, eta=args.eta,
                      sigma=args.sigma, alpha=args.alpha)
    t = 2.0 if args.t is None else args.t
    rep = tail_verify(sc, args.trials, t, args.seed)
    text = rep.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_lasso(args) -> int:
    if args.csv:
        design, _ = read_regression_csv(args.csv)
    else:
        design = LinearDesign.orthonormal(args.n, args.p, derive_seed(args.seed, 2**33))
    beta = np.zeros(design.p)
    beta[: args.sparsity] = args.beta_value
    v = check_sharp_oracle(design, beta, args.sigma, args.trials, args.seed, a=args.a_lasso)
    text = v.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    if not v.passed:
        raise CheckViolation("violation fraction exceeds the failure probability plus 3 standard errors")
    return EXIT_OK


def cmd_packing(args) -> int:
    model = "bounded" if args.noise == "bounded" else "gaussian"
    cfg = PackingConfig(m1=args.m1, m2=args.m2, r=args.rank, n=args.n, gamma=args.gamma or 1e-3,
                        model=model, sigma=args.sigma, a=args.a, eta=args.eta)
    packing = build_packing(cfg, args.seed, args.max_attempts)
    gamma = args.gamma if args.gamma else largest_gamma(packing, args.kl_alpha)
    packing = packing.at_gamma(gamma)
    checks = verify_packing(packing)
    holds, avg, rhs = kl_condition(packing, args.kl_alpha)
    if args.out:
        packing.dump(args.out)
    print(json.dumps({**packing.index(), "checks": checks, "kl_avg": avg, "kl_rhs": rhs, "kl_holds": holds},
                     sort_keys=True))
    if not (all(checks.values()) and holds):
        raise CheckViolation("packing checks failed")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tracereg", description="Nuclear-norm trace regression experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw a ground truth and a uniform completion sample")
    _model_flags(p)
    _lambda_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--truth", help="also write the ground truth matrix here")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="fit the penalized estimator to an observation file")
    p.add_argument("--obs", required=True)
    p.add_argument("--truth", help="ground truth matrix, needed by the oracle rule")
    p.add_argument("--a", type=float, default=1.0)
    p.add_argument("--sigma", type=float, default=0.5)
    p.add_argument("--alpha", type=float, default=2.0)
    p.add_argument("--eta", type=float, default=1.0)
    p.add_argument("--noise", choices=["gaussian", "subexp", "bounded", "none"], default="gaussian")
    p.add_argument("--max-iters", type=int, default=5000)
    _lambda_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("rate-sweep", help="error versus sample size with a log-log fit")
    _model_flags(p)
    _lambda_flags(p)
    p.add_argument("--n-grid", type=_int_list, default=None)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rate_sweep)

    p = sub.add_parser("rank-recovery", help="rank estimation with the inflated lambda")
    _model_flags(p, n_default=50000)
    _lambda_flags(p)
    p.add_argument("--delta", type=float, default=0.5)
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--no-scale", action="store_true", help="do not rescale A0 to meet the signal condition")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rank_recovery)

    p = sub.add_parser("bernstein", help="Monte-Carlo coverage of the bound on ||M||")
    _model_flags(p)
    p.set_defaults(m1=20, m2=20, a=0.5, noise="bounded")
    p.add_argument("--t", type=float, default=None)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bernstein)

    p = sub.add_parser("lasso", help="sharp oracle inequality check for the Lasso")
    p.add_argument("--p", type=int, default=16)
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--sigma", type=float, default=0.3)
    p.add_argument("--a", dest="a_lasso", type=float, default=1.0, help="multiplier in the lambda constant")
    p.add_argument("--sparsity", type=int, default=2)
    p.add_argument("--beta-value", type=float, default=1.0)
    p.add_argument("--csv", help="design CSV; default is an orthonormal design")
    p.add_argument("--trials", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_lasso)

    p = sub.add_parser("packing", help="build and verify a lower-bound packing")
    _model_flags(p, n_default=1000)
    p.set_defaults(m1=16, m2=8, rank=1)
    p.add_argument("--gamma", type=float, default=None, help="default: largest gamma meeting the KL condition")
    p.add_argument("--kl-alpha", type=float, default=1 / 16)
    p.add_argument("--max-attempts", type=int, default=10**5)
    p.add_argument("--out", help="directory for the matrix files and index.json")
    p.set_defaults(func=cmd_packing)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_INVALID if e.code else EXIT_OK
    try:
        return args.func(args)
    except CheckViolation as e:
        print(f"check violated: {e}", file=sys.stderr)
        return EXIT_VIOLATION
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (TraceRegError, ValueError, OSError) as e:
        if isinstance(e, ShortfallError):
            print(f"shortfall: {e}", file=sys.stderr)
        else:
            print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
