"""Seeded Monte-Carlo experiments over uniform matrix completion.

Each trial derives its seed from (master seed, trial index), draws a fresh
ground truth and sample, fits the closed-form estimator and records the
error next to the oracle-inequality right-hand sides.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import astuple, dataclass, fields

import numpy as np

from .designs import Design, NoiseModel, generate_ground_truth, sample_observations
from .errors import InvalidParameterError
from .estimators import LambdaRule, estimate_completion, oracle_rhs, select_lambda, slow_rate_rhs
from .linalg import format_float, svd
from .rng import derive_seed
from .stochastic import completion_M_bound, m_norm

FLOAT_RTOL = 1e-10


@dataclass
class ExperimentRecord:
    trial: int
    m1: int
    m2: int
    n: int
    rank_true: int
    lambda_: float
    lambda_rule: str
    frob_err_sq_norm: float
    rank_hat: int
    oracle_rhs_fast: float
    oracle_rhs_slow: float
    m_norm: float
    bound_m: float
    seed: int

    @property
    def hypothesis_held(self) -> bool:
        return self.lambda_ >= 2.0 * self.m_norm

    @property
    def fast_ok(self) -> bool:
        return self.frob_err_sq_norm <= self.oracle_rhs_fast * (1 + FLOAT_RTOL)

    @property
    def slow_ok(self) -> bool:
        return self.frob_err_sq_norm <= self.oracle_rhs_slow * (1 + FLOAT_RTOL)

    @property
    def violates(self) -> bool:
        """An oracle inequality fails although lambda >= 2 ||M||_inf."""
        return self.hypothesis_held and not (self.fast_ok and self.slow_ok)


CSV_COLUMNS = [f.name.rstrip("_") for f in fields(ExperimentRecord)]


def _cell(v) -> str:
    if isinstance(v, float):
        return format_float(v)
    return str(v)


def records_to_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in records:
        w.writerow([_cell(v) for v in astuple(r)])
    return buf.getvalue()


def records_from_csv(text: str) -> list[ExperimentRecord]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != CSV_COLUMNS:
        raise InvalidParameterError("missing or unexpected CSV header")
    out = []
    for row in rows[1:]:
        vals = []
        for f, v in zip(fields(ExperimentRecord), row):
            vals.append(int(v) if f.type in ("int", int) else v if f.type in ("str", str) else float(v))
        out.append(ExperimentRecord(*vals))
    return out


@dataclass(frozen=True)
class TrialConfig:
    m1: int
    m2: int
    rank: int
    n: int
    a: float = 1.0
    noise: str = "gaussian"  # gaussian, subexp, bounded, none
    sigma: float = 0.5
    alpha: float = 2.0
    eta: float = 1.0
    lambda_rule: str = "oracle"  # oracle, theory-gaussian, theory-bounded, explicit, fixed
    lam: float | None = None
    C_star: float = 4.0
    t: float | None = None

    def __post_init__(self):
        if min(self.m1, self.m2, self.rank, self.n) < 1:
            raise InvalidParameterError("m1, m2, rank and n must be positive")
        if self.rank > min(self.m1, self.m2):
            raise InvalidParameterError("rank must not exceed min(m1, m2)")
        if self.noise == "bounded" and self.a > self.eta:
            raise InvalidParameterError("bounded responses need a <= eta")
        self.rule()
        self.noise_model()

    def noise_model(self) -> NoiseModel:
        if self.noise == "gaussian":
            return NoiseModel.gaussian(self.sigma)
        if self.noise == "subexp":
            return NoiseModel.subexp(self.sigma, self.alpha)
        if self.noise == "bounded":
            return NoiseModel.bounded_sign(self.eta)
        if self.noise == "none":
            return NoiseModel.none()
        raise InvalidParameterError(f"unknown noise {self.noise!r}")

    @property
    def c_star(self) -> float:
        return self.eta if self.noise == "bounded" else max(self.sigma, self.a)

    def rule(self) -> LambdaRule:
        kind = self.lambda_rule.replace("-", "_")
        alpha = self.alpha if self.noise == "subexp" else 2.0
        return LambdaRule(kind=kind, t=self.t, c_star=self.c_star, C_star=self.C_star, alpha=alpha,
                          value=self.lam)

    def bound_m(self) -> float:
        t = math.log(self.m1 + self.m2) if self.t is None else self.t
        if self.noise == "bounded":
            return completion_M_bound("learning", self.m1, self.m2, self.n, t, eta=self.eta)
        alpha = self.alpha if self.noise == "subexp" else 2.0
        return completion_M_bound("gaussian_subexp", self.m1, self.m2, self.n, t, sigma=self.sigma, a=self.a,
                                  alpha=alpha)


def run_trial(cfg: TrialConfig, trial: int, master_seed: int) -> ExperimentRecord:
    seed = derive_seed(master_seed, trial)
    A0 = generate_ground_truth(cfg.m1, cfg.m2, cfg.rank, cfg.a, derive_seed(seed, 0))
    design = Design.usr(cfg.m1, cfg.m2)
    obs = sample_observations(A0, design, cfg.noise_model(), cfg.n, derive_seed(seed, 1))
    lam = select_lambda(cfg.rule(), obs, A0)
    A_hat = estimate_completion(obs, lam)
    mu = math.sqrt(cfg.m1 * cfg.m2)
    err = float(np.sum((A_hat - A0) ** 2)) / (cfg.m1 * cfg.m2)
    return ExperimentRecord(trial=trial, m1=cfg.m1, m2=cfg.m2, n=cfg.n, rank_true=svd(A0).numerical_rank,
                            lambda_=lam, lambda_rule=cfg.lambda_rule, frob_err_sq_norm=err,
                            rank_hat=svd(A_hat).numerical_rank, oracle_rhs_fast=oracle_rhs(A0, lam, mu, "fast"),
                            oracle_rhs_slow=slow_rate_rhs(A0, lam, design), m_norm=m_norm(obs, A0),
                            bound_m=cfg.bound_m(), seed=seed)


def _run(args):
    return run_trial(*args)


def run_trials(jobs_list, jobs: int = 1) -> list[ExperimentRecord]:
    """Run (cfg, trial, seed) tuples; results come back in input order."""
    jobs_list = list(jobs_list)
    if jobs <= 1:
        return [_run(j) for j in jobs_list]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(_run, jobs_list, chunksize=max(1, len(jobs_list) // (4 * jobs))))


def rate_sweep(base: TrialConfig, n_grid, trials: int, seed: int, jobs: int = 1) -> list[ExperimentRecord]:
    """``trials`` trials per n; trial indices run consecutively across the grid."""
    if trials < 1:
        raise InvalidParameterError("trials must be positive")
    work = []
    k = 0
    for n in n_grid:
        cfg = TrialConfig(**{**base.__dict__, "n": int(n)})
        for _ in range(trials):
            work.append((cfg, k, seed))
            k += 1
    return run_trials(work, jobs)


def summarize(records) -> list[tuple[int, float, float, float, float]]:
    """(n, median error, q25, q75, median fast bound) per distinct n."""
    by_n: dict[int, list[ExperimentRecord]] = {}
    for r in records:
        by_n.setdefault(r.n, []).append(r)
    out = []
    for n in sorted(by_n):
        e = np.array([r.frob_err_sq_norm for r in by_n[n]])
        b = np.array([r.oracle_rhs_fast for r in by_n[n]])
        out.append((n, float(np.median(e)), float(np.quantile(e, 0.25)), float(np.quantile(e, 0.75)),
                    float(np.median(b))))
    return out


def format_dat(rows) -> str:
    lines = ["# n median_error q25 q75 theory_bound"]
    for n, med, q25, q75, tb in rows:
        lines.append(" ".join([str(n)] + [format_float(v) for v in (med, q25, q75, tb)]))
    return "\n".join(lines) + "\n"


@dataclass
class RateFit:
    slope: float
    intercept: float
    r2: float


def fit_rate(records) -> RateFit:
    """Least squares of log median error on log n."""
    by_n: dict[int, list[float]] = {}
    for r in records:
        by_n.setdefault(int(r.n), []).append(float(r.frob_err_sq_norm))
    if len(by_n) < 3:
        raise InvalidParameterError("rate fit needs at least 3 distinct n values")
    ns = np.array(sorted(by_n), dtype=np.float64)
    med = np.array([np.median(by_n[int(n)]) for n in ns])
    if np.any(med <= 0):
        raise InvalidParameterError("median errors must be positive for a log-log fit")
    x, y = np.log(ns), np.log(med)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return RateFit(float(slope), float(intercept), r2)
