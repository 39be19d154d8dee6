"""Nuclear-norm penalized estimation with known sampling distribution.

The estimator minimizes

    L_n(A) = ||A||^2_{L2(Pi)} - <(2/n) sum_i Y_i X_i, A> + lam ||A||_1

over all m1 x m2 matrices. For uniform completion sampling the minimizer is
explicit: soft-threshold the singular values of
``X = (m1 m2 / n) sum_i Y_i X_i`` at ``lam m1 m2 / 2``. For the other designs
:func:`solve_penalized` runs proximal gradient descent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .designs import ObservationSet, ensure_completion, l2_pi_norm_sq
from .errors import InvalidParameterError, MissingOracleError, NumericalError
from .linalg import as_matrix, nuclear_norm, soft_threshold_svd, svd
from .rng import make_rng

SHARP_CONSTANT = ((1 + math.sqrt(2)) / 2) ** 2

LAMBDA_KINDS = ("oracle", "theory_gaussian", "theory_bounded", "explicit", "fixed")


@dataclass(frozen=True)
class LambdaRule:
    """How the regularization parameter is chosen.

    ``theory_gaussian``: C_star * c_star * max{sqrt((t+log m)/((m1^m2) n)),
    (t+log m) log^{1/alpha}(m1^m2)/n} with c_star = sigma v a.
    ``theory_bounded``: 4 * c_star * max{sqrt(...), 2(t+log m)/n} with c_star = eta.
    ``explicit``: C_star * c_star * sqrt(log m / ((m1^m2) n)).
    ``oracle``: 2 ||M||_inf, needs the true matrix.
    ``fixed``: ``value``.

    ``t=None`` means t = log(m1 + m2).
    """

    kind: str
    t: float | None = None
    c_star: float = 1.0
    C_star: float = 4.0
    alpha: float = 2.0
    value: float | None = None

    def __post_init__(self):
        if self.kind not in LAMBDA_KINDS:
            raise InvalidParameterError(f"unknown lambda rule {self.kind!r}")
        if self.t is not None and not self.t > 0:
            raise InvalidParameterError("confidence parameter t must be positive")
        if not (self.c_star > 0 and self.C_star > 0):
            raise InvalidParameterError("c_star and C_star must be positive")
        if self.kind == "fixed" and not (self.value is not None and self.value > 0):
            raise InvalidParameterError("fixed lambda rule needs a positive value")

    @property
    def label(self) -> str:
        return self.kind


@dataclass(frozen=True)
class SolverConfig:
    max_iters: int = 5000
    rel_tol: float = 1e-10
    step_size: float | None = None  # None: 1/L

    def __post_init__(self):
        if self.max_iters < 1:
            raise InvalidParameterError("max_iters must be positive")
        if not self.rel_tol > 0:
            raise InvalidParameterError("rel_tol must be positive")
        if self.step_size is not None and not self.step_size > 0:
            raise InvalidParameterError("step_size must be positive")


@dataclass
class SolverInfo:
    iterations: int
    converged: bool
    objective: float
    step_size: float
    history: list[float] = field(default_factory=list, repr=False)


def build_X_matrix(obs: ObservationSet) -> np.ndarray:
    """(m1 m2 / n) sum_i Y_i X_i for a completion sample."""
    ensure_completion(obs)
    m1, m2 = obs.shape
    return obs.weighted_sum() * (m1 * m2 / obs.n)


def completion_threshold(lam: float, m1: int, m2: int) -> float:
    return lam * m1 * m2 / 2


def estimate_completion(obs: ObservationSet, lam: float) -> np.ndarray:
    """Closed-form minimizer for uniform completion sampling."""
    if not lam > 0:
        raise InvalidParameterError("lambda must be positive")
    m1, m2 = obs.shape
    return soft_threshold_svd(build_X_matrix(obs), completion_threshold(lam, m1, m2))


def objective(A: np.ndarray, obs: ObservationSet, lam: float) -> float:
    """L_n(A)."""
    lin = obs.weighted_sum() * (2.0 / obs.n)
    return l2_pi_norm_sq(A, obs.design) - float(np.vdot(lin, A)) + lam * nuclear_norm(A)


def smooth_gradient(A: np.ndarray, obs: ObservationSet) -> np.ndarray:
    return 2.0 * obs.design.gram_apply(A) - obs.weighted_sum() * (2.0 / obs.n)


def solve_penalized(obs: ObservationSet, lam: float, cfg: SolverConfig | None = None,
                    return_info: bool = False, init=None):
    """Proximal gradient descent on L_n.

    Each step is ``A <- S_{t lam}(A - t grad)`` where S is singular value
    soft-thresholding and t the step size (default 1/L, L = 2 * largest
    eigenvalue of the L2(Pi) Gram operator). Stops when the Frobenius
    change of the iterate falls below ``rel_tol * (1 + ||A||_2)``.
    """
    if not lam > 0:
        raise InvalidParameterError("lambda must be positive")
    cfg = cfg or SolverConfig()
    curv = obs.design.curvature()
    if not curv > 0:
        raise NumericalError("design Gram operator is zero; objective is not bounded")
    step = cfg.step_size if cfg.step_size is not None else 1.0 / (2.0 * curv)
    lin = obs.weighted_sum() * (2.0 / obs.n)
    design = obs.design

    def F(A):
        return l2_pi_norm_sq(A, design) - float(np.vdot(lin, A)) + lam * nuclear_norm(A)

    A = np.zeros(obs.shape) if init is None else as_matrix(init).copy()
    history = [F(A)]
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        grad = 2.0 * design.gram_apply(A) - lin
        A_next = soft_threshold_svd(A - step * grad, step * lam)
        f_next = F(A_next)
        if not math.isfinite(f_next):
            raise NumericalError(f"objective diverged at iteration {it}; step size {step} too large")
        history.append(f_next)
        change = float(np.linalg.norm(A_next - A))
        A = A_next
        if change <= cfg.rel_tol * (1.0 + float(np.linalg.norm(A))):
            converged = True
            break
    if return_info:
        return A, SolverInfo(iterations=it, converged=converged, objective=history[-1],
                             step_size=step, history=history)
    return A


def log_m(m1: int, m2: int) -> float:
    return math.log(m1 + m2)


def select_lambda(rule: LambdaRule, obs: ObservationSet, A0=None) -> float:
    m1, m2 = obs.shape
    n = obs.n
    lm = log_m(m1, m2)
    t = lm if rule.t is None else rule.t
    small = min(m1, m2)
    if rule.kind == "fixed":
        return float(rule.value)
    if rule.kind == "oracle":
        if A0 is None:
            raise MissingOracleError("oracle lambda requires the true matrix A0")
        from .stochastic import compute_M

        return 2.0 * float(np.linalg.norm(compute_M(obs, A0), 2))
    if rule.kind == "explicit":
        return rule.C_star * rule.c_star * math.sqrt(lm / (small * n))
    first = math.sqrt((t + lm) / (small * n))
    if rule.kind == "theory_bounded":
        return 4.0 * rule.c_star * max(first, 2.0 * (t + lm) / n)
    second = (t + lm) * math.log(small) ** (1.0 / rule.alpha) / n
    return rule.C_star * rule.c_star * max(first, second)


def tau_squared(C_star: float, c_star: float, m1: int, m2: int, n: int) -> float:
    """tau^2 = ((1+sqrt2)/2)^2 C_*^2 c_*^2 max(m1,m2) log(m) / n."""
    return SHARP_CONSTANT * C_star**2 * c_star**2 * max(m1, m2) * log_m(m1, m2) / n


def oracle_rhs(A0, lam: float, mu: float, variant: str = "fast", q: float | None = None,
               tau_sq: float | None = None) -> float:
    """Right-hand side of the oracle inequalities evaluated at A = A0.

    ``slow``: 2 lam ||A0||_1. ``fast``: ((1+sqrt2)/2)^2 mu^2 lam^2 rank(A0).
    ``schatten``: sum_j min{tau^2, sigma_j(A0)^2/(m1 m2)}; ``q`` in (0, 2].
    """
    A0 = as_matrix(A0, "A0")
    if not (lam > 0 and mu > 0):
        raise InvalidParameterError("lambda and mu must be positive")
    if variant == "slow":
        return 2.0 * lam * nuclear_norm(A0)
    if variant == "fast":
        return SHARP_CONSTANT * mu**2 * lam**2 * svd(A0).numerical_rank
    if variant == "schatten":
        if q is None or not (0 < q <= 2):
            raise InvalidParameterError("schatten variant needs q in (0, 2]")
        if tau_sq is None or tau_sq < 0:
            raise InvalidParameterError("schatten variant needs tau_sq >= 0")
        f = svd(A0)
        s = f.sigma[: f.numerical_rank]
        m1, m2 = A0.shape
        return float(np.sum(np.minimum(tau_sq, s**2 / (m1 * m2))))
    raise InvalidParameterError(f"unknown variant {variant!r}")


def schatten_q_bound(A0, tau_sq: float, q: float) -> float:
    """tau^{2-q} ||A0||_q^q / (m1 m2)^{q/2}, which dominates the schatten variant."""
    A0 = as_matrix(A0, "A0")
    if not 0 < q <= 2:
        raise InvalidParameterError("q must lie in (0, 2]")
    f = svd(A0)
    s = f.sigma[: f.numerical_rank]
    m1, m2 = A0.shape
    return float(tau_sq ** ((2 - q) / 2) * np.sum(s**q) / (m1 * m2) ** (q / 2))


def slow_rate_candidates(A0) -> list[np.ndarray]:
    """0, A0 and its best rank-k truncations, k = 1..rank(A0)."""
    A0 = as_matrix(A0, "A0")
    f = svd(A0)
    out = [np.zeros_like(A0), A0]
    for k in range(1, f.numerical_rank + 1):
        sig = f.sigma.copy()
        sig[k:] = 0.0
        out.append(f.reconstruct(sig))
    return out


def slow_rate_rhs(A0, lam: float, design) -> float:
    """min over the candidate grid of ||A - A0||^2_{L2(Pi)} + 2 lam ||A||_1."""
    A0 = as_matrix(A0, "A0")
    return min(l2_pi_norm_sq(A - A0, design) + 2.0 * lam * nuclear_norm(A)
               for A in slow_rate_candidates(A0))


@dataclass
class OptimalityReport:
    passed: bool
    tangent_residual: float
    normal_excess: float
    perturbation_gain: float
    closed_form_residual: float | None = None


def check_optimality(A_hat, obs: ObservationSet, lam: float, tol: float = 1e-8,
                     n_perturb: int = 20, seed=0) -> OptimalityReport:
    """First-order optimality of ``A_hat`` for L_n.

    G = -grad(A_hat)/lam must be a subgradient of the nuclear norm at A_hat:
    G = U V^T + P_{S1perp} W P_{S2perp} with ||W||_inf <= 1, where (U, V)
    span the support of A_hat. Also checks L_n(A_hat + D) >= L_n(A_hat) - tol
    for random small D. For completion samples, additionally verifies the
    explicit certificate built from the SVD of the X matrix.
    """
    A_hat = as_matrix(A_hat, "A_hat")
    G = -smooth_gradient(A_hat, obs) / lam
    f = svd(A_hat)
    U, V = f.support()
    UV = U @ V.T
    P1 = np.eye(A_hat.shape[0]) - U @ U.T
    P2 = np.eye(A_hat.shape[1]) - V @ V.T
    normal = P1 @ G @ P2
    tangent_residual = float(np.linalg.norm(G - normal - UV))
    normal_excess = float(np.linalg.norm(normal, 2)) - 1.0

    rng = make_rng(seed)
    base = objective(A_hat, obs, lam)
    scale = 1e-4 * (1.0 + float(np.linalg.norm(A_hat)))
    gain = math.inf
    for _ in range(n_perturb):
        D = rng.standard_normal(A_hat.shape)
        D *= scale / np.linalg.norm(D)
        gain = min(gain, objective(A_hat + D, obs, lam) - base)

    closed = None
    if obs.design.is_completion:
        m1, m2 = obs.shape
        thr = completion_threshold(lam, m1, m2)
        fx = svd(build_X_matrix(obs))
        below = fx.sigma <= thr
        # coefficient 2 sigma_j / (lam m1 m2) on the directions that are clipped to zero
        W = (fx.u[:, below] * (fx.sigma[below] / thr)) @ fx.v[:, below].T
        closed = float(np.linalg.norm(2.0 * (A_hat - build_X_matrix(obs)) + 2.0 * thr * (UV + W)))
        closed /= 2.0 * thr

    passed = tangent_residual <= tol and normal_excess <= tol and gain >= -tol
    if closed is not None:
        passed = passed and closed <= tol
    return OptimalityReport(passed=passed, tangent_residual=tangent_residual,
                            normal_excess=normal_excess, perturbation_gain=gain,
                            closed_form_residual=closed)
