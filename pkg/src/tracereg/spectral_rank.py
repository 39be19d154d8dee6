"""Rank recovery with an inflated regularization parameter.

With lam >= 2 ||M||_inf and lam' = lam / (1 - delta), the rank of the
completion estimate at lam' never exceeds rank(A0), and equals it once
the smallest nonzero singular value of A0 is at least lam' m1 m2.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .designs import ObservationSet, ensure_completion
from .errors import InvalidParameterError
from .estimators import build_X_matrix, completion_threshold, log_m
from .linalg import as_matrix, singular_values, svd
from .stochastic import m_norm

# relative slack for comparing quantities that can tie in exact arithmetic
FLOAT_RTOL = 1e-10


@dataclass(frozen=True)
class RankRecoveryConfig:
    base_lambda: float
    delta: float = 0.5

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise InvalidParameterError("delta must lie in (0, 1)")
        if not self.base_lambda > 0:
            raise InvalidParameterError("base_lambda must be positive")

    @property
    def lambda_prime(self) -> float:
        return self.base_lambda / (1.0 - self.delta)


def recover_rank(obs: ObservationSet, cfg: RankRecoveryConfig) -> tuple[np.ndarray, int]:
    """Estimate at lam' and its rank, read off as #{j : sigma_j(X) > lam' m1 m2 / 2}."""
    ensure_completion(obs)
    m1, m2 = obs.shape
    thr = completion_threshold(cfg.lambda_prime, m1, m2)
    f = svd(build_X_matrix(obs))
    keep = f.sigma > thr
    estimate = f.reconstruct(np.where(keep, f.sigma - thr, 0.0))
    return estimate, int(np.count_nonzero(keep))


@dataclass
class RankVerdict:
    rank_true: int
    r_hat: int
    hypothesis_held: bool
    upper_ok: bool
    signal_condition_met: bool
    lower_rank_ok: bool
    frob_lower_ok: bool
    weyl_ok: bool
    frob_err_sq: float
    frob_lower_bound: float
    m_norm: float

    @property
    def consistent(self) -> bool:
        """True unless a guarantee whose hypotheses hold is violated."""
        if not self.hypothesis_held:
            return True
        if not (self.upper_ok and self.weyl_ok):
            return False
        if self.signal_condition_met:
            return self.lower_rank_ok and self.frob_lower_ok
        return True

    def to_dict(self) -> dict:
        return asdict(self)


def frob_lower_bound(delta: float, rank: int, lam: float, m1: int, m2: int) -> float:
    """delta^2 / (4 (1-delta)^2) * rank * (lam m1 m2)^2."""
    return delta**2 / (4.0 * (1.0 - delta) ** 2) * rank * (lam * m1 * m2) ** 2


def check_rank_theorem(A0, obs: ObservationSet, cfg: RankRecoveryConfig) -> RankVerdict:
    A0 = as_matrix(A0, "A0")
    ensure_completion(obs)
    m1, m2 = obs.shape
    Mn = m_norm(obs, A0)
    f0 = svd(A0)
    r = f0.numerical_rank
    estimate, r_hat = recover_rank(obs, cfg)
    lam, lam_p = cfg.base_lambda, cfg.lambda_prime

    hypothesis = lam >= 2.0 * Mn
    sigma_min = float(f0.sigma[r - 1]) if r > 0 else math.inf
    signal = sigma_min >= lam_p * m1 * m2
    err = float(np.sum((estimate - A0) ** 2))
    lower = frob_lower_bound(cfg.delta, r, lam, m1, m2)
    sx = singular_values(build_X_matrix(obs))
    weyl = float(np.max(np.abs(sx - f0.sigma))) <= m1 * m2 * Mn * (1 + FLOAT_RTOL) + 1e-12
    return RankVerdict(rank_true=r, r_hat=r_hat, hypothesis_held=bool(hypothesis), upper_ok=r_hat <= r,
                       signal_condition_met=bool(signal), lower_rank_ok=r_hat >= r,
                       frob_lower_ok=err >= lower * (1 - FLOAT_RTOL), weyl_ok=bool(weyl),
                       frob_err_sq=err, frob_lower_bound=lower, m_norm=Mn)


def corollary3_lambda_prime(c_star: float, C_star: float, delta: float, m1: int, m2: int,
                            n: int) -> tuple[float, float]:
    """(lam', signal threshold on min sigma_j(A0)) for the data-free choice of lambda."""
    if not 0 < delta < 1:
        raise InvalidParameterError("delta must lie in (0, 1)")
    if not (c_star > 0 and C_star > 0 and min(m1, m2, n) >= 1):
        raise InvalidParameterError("parameters must be positive")
    scale = C_star * c_star / (1.0 - delta)
    lm = log_m(m1, m2)
    lam_p = scale * math.sqrt(lm / (min(m1, m2) * n))
    threshold = scale * math.sqrt(m1 * m2) * math.sqrt(lm * max(m1, m2) / n)
    return lam_p, threshold


def lambda_prime_error_lower_bound(c_star: float, C_star: float, delta: float, rank: int, m1: int, m2: int,
                                 n: int) -> float:
    """Lower bound on (1/(m1 m2)) ||A_hat - A0||_2^2 once the rank is recovered."""
    return (delta**2 * C_star**2 * c_star**2 / (4.0 * (1.0 - delta) ** 2)
            * rank * log_m(m1, m2) * max(m1, m2) / n)


def scale_to_signal(A0, noise, n: int, seed, delta: float = 0.5, max_doublings: int = 40):
    """Double A0 until min sigma_j(A0) >= lam' m1 m2 under the oracle lambda.

    Observations are redrawn with the same seed after each doubling, so the
    sampled cells and noise stay fixed and only the signal grows. Returns
    (scaled A0, observations, oracle base lambda, scale factor).
    """
    from .designs import Design, sample_observations
    from .errors import ShortfallError

    A0 = as_matrix(A0, "A0")
    m1, m2 = A0.shape
    f = svd(A0)
    r = f.numerical_rank
    if r == 0:
        raise InvalidParameterError("A0 must be nonzero")
    design = Design.usr(m1, m2)
    scale = 1.0
    for _ in range(max_doublings + 1):
        A = scale * A0
        obs = sample_observations(A, design, noise, n, seed)
        lam = 2.0 * m_norm(obs, A)
        if scale * f.sigma[r - 1] >= lam / (1.0 - delta) * m1 * m2:
            return A, obs, lam, scale
        scale *= 2.0
    raise ShortfallError("signal condition not reached; sampling error dominates at this n",
                         achieved=0, target=1)
