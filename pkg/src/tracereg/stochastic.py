"""The stochastic error matrix M and matrix Bernstein bounds on its operator norm.

``M = (1/n) sum_i (Y_i X_i - E(Y_i X_i))``. When the model holds,
``E(Y_i X_i)`` is the Gram operator of the design applied to A0, so M is
computable exactly in simulations.
"""

from __future__ import annotations

import functools
import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import brentq

from .designs import Design, NoiseModel, ObservationSet, generate_ground_truth, sample_observations
from .errors import DimensionError, InvalidParameterError
from .linalg import as_matrix, operator_norm
from .rng import derive_seed, make_rng


def compute_M(obs: ObservationSet, A0) -> np.ndarray:
    A0 = as_matrix(A0, "A0")
    if A0.shape != obs.shape:
        raise DimensionError(f"A0 shape {A0.shape} does not match observations {obs.shape}")
    return obs.weighted_sum() / obs.n - obs.design.gram_apply(A0)


def m_norm(obs: ObservationSet, A0) -> float:
    return operator_norm(compute_M(obs, A0))


@dataclass(frozen=True)
class BernsteinInputs:
    sigma_Z: float
    U: float
    t: float
    m1: int
    m2: int
    n: int
    alpha: float = math.inf

    def __post_init__(self):
        if self.sigma_Z < 0 or self.U < 0:
            raise InvalidParameterError("sigma_Z and U must be nonnegative")
        if not self.t > 0:
            raise InvalidParameterError("t must be positive")
        if min(self.m1, self.m2, self.n) < 1:
            raise InvalidParameterError("m1, m2 and n must be positive")
        if not self.alpha >= 1:
            raise InvalidParameterError("alpha must be >= 1")

    @property
    def log_term(self) -> float:
        return self.t + math.log(self.m1 + self.m2)


def bernstein_bound_bounded(inp: BernsteinInputs) -> float:
    """2 max{sigma_Z sqrt((t+log m)/n), U (t+log m)/n}; holds w.p. >= 1 - e^{-t}."""
    if not math.isinf(inp.alpha):
        raise InvalidParameterError("bounded Bernstein bound needs alpha = inf")
    L = inp.log_term
    return 2.0 * max(inp.sigma_Z * math.sqrt(L / inp.n), inp.U * L / inp.n)


def bernstein_bound_psi_alpha(inp: BernsteinInputs, C: float = 4.0) -> float:
    """C max{sigma_Z sqrt((t+log m)/n), U (log(U/sigma_Z))^{1/alpha} (t+log m)/n}.

    ``inp.U`` is the psi_alpha norm of ||Z||. The log factor is clamped below
    at 1. C has no known numeric value; the default is arbitrary.
    """
    if not inp.sigma_Z > 0:
        raise InvalidParameterError("psi_alpha Bernstein bound needs sigma_Z > 0")
    if not C > 0:
        raise InvalidParameterError("C must be positive")
    alpha = 1.0 if math.isinf(inp.alpha) else inp.alpha
    L = inp.log_term
    ratio = inp.U / inp.sigma_Z
    logf = max(math.log(ratio), 1.0) if ratio > 0 else 1.0
    return C * max(inp.sigma_Z * math.sqrt(L / inp.n), inp.U * logf ** (1.0 / alpha) * L / inp.n)


def _branches(m1, m2, n, t):
    L = t + math.log(m1 + m2)
    return L, math.sqrt(L / (min(m1, m2) * n))


def learning_bound(eta: float, m1: int, m2: int, n: int, t: float) -> float:
    """Bound on ||M|| for |Y| <= eta, probability >= 1 - e^{-t}."""
    L, first = _branches(m1, m2, n, t)
    return 2.0 * eta * max(first, 2.0 * L / n)


def delta1_bound(sigma: float, alpha: float, m1: int, m2: int, n: int, t: float, C: float = 4.0) -> float:
    """Noise part ||(1/n) sum xi_i X_i||, probability >= 1 - 2e^{-t} for a suitable C."""
    L, first = _branches(m1, m2, n, t)
    return C * sigma * max(first, L * math.log(min(m1, m2)) ** (1.0 / alpha) / n)


def delta2_bound(a: float, m1: int, m2: int, n: int, t: float) -> float:
    """Sampling part of ||M|| for max|a0| <= a, probability >= 1 - e^{-t}."""
    L, first = _branches(m1, m2, n, t)
    return 2.0 * a * max(first, 2.0 * L / n)


def delta2_bound_exact(A0, n: int, t: float) -> float:
    """Sampling part bound in terms of |A0|_* and max|a0(i,j)|."""
    A0 = as_matrix(A0, "A0")
    m1, m2 = A0.shape
    L = t + math.log(m1 + m2)
    return 2.0 * max(a0_star_norm(A0) * math.sqrt(L / (m1 * m2 * n)),
                     2.0 * float(np.max(np.abs(A0))) * L / n)


def completion_M_bound(kind: str, m1: int, m2: int, n: int, t: float, *, eta: float | None = None,
                       sigma: float | None = None, a: float | None = None, alpha: float = 2.0,
                       C: float = 4.0) -> float:
    """High-probability bound on ||M||_inf for uniform completion.

    ``learning`` (|Y| <= eta): probability >= 1 - e^{-t}.
    ``gaussian_subexp`` (noise scale sigma, max|a0| <= a): the noise and
    sampling parts are bounded separately and added; probability >= 1 - 3e^{-t}.
    """
    if not t > 0 or min(m1, m2, n) < 1:
        raise InvalidParameterError("need t > 0 and positive m1, m2, n")
    if kind == "learning":
        if eta is None or not eta > 0:
            raise InvalidParameterError("learning bound needs eta > 0")
        return learning_bound(eta, m1, m2, n, t)
    if kind == "gaussian_subexp":
        if sigma is None or a is None or not (sigma > 0 and a >= 0):
            raise InvalidParameterError("gaussian_subexp bound needs sigma > 0 and a >= 0")
        return delta1_bound(sigma, alpha, m1, m2, n, t, C) + delta2_bound(a, m1, m2, n, t)
    raise InvalidParameterError(f"unknown bound kind {kind!r}")



def a0_star_norm(A0) -> float:
    """max of the largest row and column Euclidean norms."""
    A0 = as_matrix(A0, "A0")
    return float(max(np.sqrt(np.max(np.sum(A0 * A0, axis=1))), np.sqrt(np.max(np.sum(A0 * A0, axis=0)))))


def completion_design_moments(m1: int, m2: int) -> dict:
    """||X||, ||E X|| and sigma_X^2 for X uniform on the completion basis.

    Computed by summing over all m1*m2 basis matrices.
    """
    EX = np.zeros((m1, m2))
    EXXt = np.zeros((m1, m1))
    EXtX = np.zeros((m2, m2))
    norm_X = 0.0
    w = 1.0 / (m1 * m2)
    for i in range(m1):
        for j in range(m2):
            X = np.zeros((m1, m2))
            X[i, j] = 1.0
            norm_X = max(norm_X, float(np.linalg.norm(X, 2)))
            EX += w * X
            EXXt += w * (X @ X.T)
            EXtX += w * (X.T @ X)
    sigma_sq = max(np.linalg.norm(EXXt, 2), np.linalg.norm(EXtX, 2))
    return {"norm_X": norm_X, "norm_EX": float(np.linalg.norm(EX, 2)), "sigma_X_sq": float(sigma_sq),
            "EXXt": EXXt, "EXtX": EXtX}


def sigma_Z_completion(A0, second_moment, centered: bool = True) -> float:
    """Variance proxy of Z = Y X - E(Y X) under uniform completion sampling.

    ``second_moment[i, j]`` is E(Y^2 | X = e_i e_j^T). With ``centered=False``
    the proxy of Y X itself is returned.
    """
    A0 = as_matrix(A0, "A0")
    s = np.broadcast_to(np.asarray(second_moment, dtype=np.float64), A0.shape)
    m1, m2 = A0.shape
    mm = m1 * m2
    ZZt = np.diag(s.sum(axis=1)) / mm
    ZtZ = np.diag(s.sum(axis=0)) / mm
    if centered:
        ZZt = ZZt - A0 @ A0.T / mm**2
        ZtZ = ZtZ - A0.T @ A0 / mm**2
    return math.sqrt(max(np.linalg.norm(ZZt, 2), np.linalg.norm(ZtZ, 2)))


def response_second_moment(A0, noise: NoiseModel) -> np.ndarray:
    """E(Y^2 | X = e_i e_j^T) for each cell."""
    A0 = as_matrix(A0, "A0")
    if noise.kind == "bounded_sign":
        return np.full(A0.shape, noise.eta**2)
    return A0 * A0 + noise.additive_variance()


def psi_alpha_norm(samples, alpha: float) -> float:
    """Empirical psi_alpha norm: inf{u > 0 : mean exp((|s|/u)^alpha) <= 2}."""
    s = np.abs(np.asarray(samples, dtype=np.float64))
    if not alpha >= 1:
        raise InvalidParameterError("alpha must be >= 1")
    smax = float(s.max())
    if smax == 0:
        return 0.0

    def excess(u):
        with np.errstate(over="ignore"):
            return float(np.mean(np.exp((s / u) ** alpha))) - 2.0

    hi = smax / math.log(2.0) ** (1.0 / alpha)  # every term <= 2 here
    lo = hi / 2.0
    while excess(lo) <= 0:
        lo /= 2.0
    return float(brentq(excess, lo, hi, xtol=1e-12 * hi, rtol=1e-10))


@functools.lru_cache(maxsize=64)
def noise_psi_alpha_norm(noise: NoiseModel, m1: int, m2: int, samples: int = 10**6, seed: int = 0) -> float:
    """psi_alpha norm of ||xi (X - E X)|| for uniform completion, by Monte Carlo."""
    if noise.kind not in ("gaussian", "subexp"):
        raise InvalidParameterError("psi_alpha norm is only needed for gaussian/subexp noise")
    centered = -np.full((m1, m2), 1.0 / (m1 * m2))
    centered[0, 0] += 1.0
    c = float(np.linalg.norm(centered, 2))  # same for every basis element by symmetry
    xi = noise.draw(np.zeros(samples), make_rng(seed))
    return psi_alpha_norm(c * xi, noise.tail_alpha)


# --- Monte-Carlo coverage ----------------------------------------------------

SCENARIOS = ("learning", "gaussian", "subexp", "none")


@dataclass(frozen=True)
class TailScenario:
    kind: str = "learning"
    m1: int = 20
    m2: int = 20
    n: int = 2000
    rank: int = 2
    a: float = 0.5
    eta: float = 1.0
    sigma: float = 0.5
    alpha: float = 2.0
    C: float = 4.0

    def __post_init__(self):
        if self.kind not in SCENARIOS:
            raise InvalidParameterError(f"unknown scenario {self.kind!r}")
        if self.kind == "learning" and self.a > self.eta:
            raise InvalidParameterError("learning scenario needs a <= eta")

    def noise(self) -> NoiseModel:
        if self.kind == "learning":
            return NoiseModel.bounded_sign(self.eta)
        if self.kind == "gaussian":
            return NoiseModel.gaussian(self.sigma)
        if self.kind == "subexp":
            return NoiseModel.subexp(self.sigma, self.alpha)
        return NoiseModel.none()

    def ground_truth(self, seed) -> np.ndarray:
        if self.kind == "none":
            return np.zeros((self.m1, self.m2))
        return generate_ground_truth(self.m1, self.m2, self.rank, self.a, seed)

    def bound(self, t: float) -> tuple[str, float, float]:
        """(bound kind, bound value, target exceedance probability)."""
        if self.kind in ("learning", "none"):
            eta = self.eta if self.kind == "learning" else 1.0
            return "learning", learning_bound(eta, self.m1, self.m2, self.n, t), math.exp(-t)
        alpha = 2.0 if self.kind == "gaussian" else self.alpha
        value = completion_M_bound("gaussian_subexp", self.m1, self.m2, self.n, t, sigma=self.sigma,
                                   a=self.a, alpha=alpha, C=self.C)
        return "gaussian_subexp", value, 3.0 * math.exp(-t)


@dataclass
class CoverageReport:
    scenario: str
    trials: int
    t: float
    bound_kind: str
    bound: float
    exceed_count: int
    exceed_frac: float
    target: float
    m_norms: list = None

    def to_json(self) -> str:
        d = asdict(self)
        d.pop("m_norms")
        return json.dumps(d, sort_keys=True)


def tail_verify(scenario: TailScenario, trials: int, t: float, seed: int, keep_norms: bool = False) -> CoverageReport:
    """Count trials where ||M||_inf exceeds the theoretical bound."""
    if trials < 100:
        raise InvalidParameterError("tail verification needs at least 100 trials")
    if not t > 0:
        raise InvalidParameterError("t must be positive")
    A0 = scenario.ground_truth(derive_seed(seed, 2**32))
    design = Design.usr(scenario.m1, scenario.m2)
    noise = scenario.noise()
    bound_kind, bound, target = scenario.bound(t)
    norms = np.empty(trials)
    for k in range(trials):
        obs = sample_observations(A0, design, noise, scenario.n, derive_seed(seed, k))
        norms[k] = m_norm(obs, A0)
    exceed = int(np.count_nonzero(norms > bound))
    return CoverageReport(scenario=scenario.kind, trials=trials, t=t, bound_kind=bound_kind, bound=bound,
                          exceed_count=exceed, exceed_frac=exceed / trials, target=target,
                          m_norms=norms.tolist() if keep_norms else None)
