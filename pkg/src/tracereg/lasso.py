"""Lasso as the diagonal special case of trace regression.

With diagonal p x p design matrices the penalized estimator becomes

    beta_hat = argmin (1/n) |y - X beta|_2^2 + lam |beta|_1,

and the sharp oracle inequality involves the restricted eigenvalue
kappa(s, c0). This module solves the Lasso, estimates kappa by brute force
at small p, and checks the inequality by simulation.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from .designs import Design, ObservationSet
from .errors import DimensionError, InvalidParameterError, NumericalError, ParseError
from .estimators import SolverConfig
from .rng import derive_seed, make_rng

KKT_TOL = 1e-8
FLOAT_RTOL = 1e-10


@dataclass(frozen=True)
class LinearDesign:
    X: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise DimensionError("design must be a nonempty n x p matrix")
        if not np.all(np.isfinite(X)):
            raise InvalidParameterError("design has non-finite entries")
        object.__setattr__(self, "X", X)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def gram(self) -> np.ndarray:
        return self.X.T @ self.X / self.n

    @property
    def normalized(self) -> bool:
        """Diagonal of (1/n) X^T X is at most 1."""
        return bool(np.max(np.sum(self.X**2, axis=0) / self.n) <= 1 + 1e-12)

    @classmethod
    def orthonormal(cls, n: int, p: int, seed) -> LinearDesign:
        """Random design with (1/n) X^T X = I_p."""
        if p > n:
            raise InvalidParameterError("orthonormal design needs p <= n")
        Q, R = np.linalg.qr(make_rng(seed).standard_normal((n, p)))
        Q = Q * np.sign(np.diag(R))
        return cls(math.sqrt(n) * Q)


def kkt_residual(design: LinearDesign, y, beta, lam: float) -> float:
    """Largest violation of the Lasso optimality conditions."""
    g = 2.0 / design.n * design.X.T @ (design.X @ beta - y)
    active = beta != 0
    viol = np.where(active, np.abs(g + lam * np.sign(beta)), np.maximum(np.abs(g) - lam, 0.0))
    return float(np.max(viol))


def lasso_objective(design: LinearDesign, y, beta, lam: float) -> float:
    r = y - design.X @ beta
    return float(r @ r) / design.n + lam * float(np.sum(np.abs(beta)))


def lasso_solve(design: LinearDesign, y, lam: float, cfg: SolverConfig | None = None) -> np.ndarray:
    """Cyclic coordinate descent on (1/n)|y - X beta|^2 + lam |beta|_1.

    Stops once the KKT residual is below 1e-8, trying an exact solve on
    the current support whenever the sweeps stall (and every 50 sweeps).
    If ``cfg.max_iters`` sweeps are not enough (typically p > n with a tiny
    lambda), the split problem beta = u - v, u, v >= 0 is handed to
    L-BFGS-B and polished. Raises :class:`NumericalError` if that fails too.
    """
    if not lam > 0:
        raise InvalidParameterError("lambda must be positive")
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (design.n,):
        raise DimensionError(f"response has shape {y.shape}, expected ({design.n},)")
    cfg = cfg or SolverConfig()
    G = design.gram
    c = design.X.T @ y / design.n
    diag = np.diag(G).copy()
    beta = np.zeros(design.p)
    half = lam / 2.0
    for sweep in range(cfg.max_iters):
        max_change = 0.0
        for j in range(design.p):
            if diag[j] == 0:
                continue
            rho = c[j] - G[j] @ beta + diag[j] * beta[j]
            new = math.copysign(max(abs(rho) - half, 0.0), rho) / diag[j]
            if new != beta[j]:
                max_change = max(max_change, abs(new - beta[j]))
                beta[j] = new
        if not np.all(np.isfinite(beta)):
            raise NumericalError("coordinate descent diverged")
        if max_change <= cfg.rel_tol * (1.0 + float(np.max(np.abs(beta)))) or sweep % 50 == 49:
            if kkt_residual(design, y, beta, lam) <= KKT_TOL:
                return beta
            polished = _polish(G, c, beta, half)
            if polished is not None and kkt_residual(design, y, polished, lam) <= KKT_TOL:
                return polished
    res = kkt_residual(design, y, beta, lam)
    if res <= KKT_TOL:
        return beta
    fallback = _bound_constrained(G, c, beta, lam)
    res_fb = kkt_residual(design, y, fallback, lam)
    if res_fb <= KKT_TOL:
        return fallback
    polished = _polish(G, c, fallback, half, tol=1e-10)
    if polished is not None and kkt_residual(design, y, polished, lam) <= KKT_TOL:
        return polished
    res = min(res, res_fb)
    raise NumericalError(f"coordinate descent stopped with KKT residual {res:.3e}")


def _bound_constrained(G: np.ndarray, c: np.ndarray, beta: np.ndarray, lam: float) -> np.ndarray:
    """Minimize b^T G b - 2 c^T b + lam |b|_1 as a smooth problem in (u, v) >= 0."""
    p = beta.size

    def fun(z):
        b = z[:p] - z[p:]
        Gb = G @ b
        g = 2.0 * (Gb - c)
        return float(b @ Gb - 2.0 * c @ b + lam * z.sum()), np.concatenate([g + lam, lam - g])

    z0 = np.concatenate([np.maximum(beta, 0.0), np.maximum(-beta, 0.0)])
    res = minimize(fun, z0, jac=True, method="L-BFGS-B", bounds=[(0.0, None)] * (2 * p),
                   options={"maxiter": 20000, "ftol": 0.0, "gtol": 1e-14})
    return res.x[:p] - res.x[p:]


def _polish(G: np.ndarray, c: np.ndarray, beta: np.ndarray, half: float, tol: float = 0.0) -> np.ndarray | None:
    """Solve the stationarity equations on the current support and sign pattern.

    Coordinate descent converges slowly on correlated designs; once the
    support is right, G_AA b = c_A - (lam/2) sign(beta_A) gives the exact
    solution. Entries with magnitude <= tol * max(1, |beta|_inf) count as
    zero. Returns None when the signs are not reproduced.
    """
    act = np.flatnonzero(np.abs(beta) > tol * max(1.0, float(np.max(np.abs(beta)))))
    if act.size == 0:
        return None
    sgn = np.sign(beta[act])
    b = np.linalg.lstsq(G[np.ix_(act, act)], c[act] - half * sgn, rcond=None)[0]
    if not np.array_equal(np.sign(b), sgn):
        return None
    out = np.zeros_like(beta)
    out[act] = b
    return out


def diag_embedding(design: LinearDesign, y) -> ObservationSet:
    """The same regression as a fixed trace-regression design with X_i = diag(x_i)."""
    n, p = design.X.shape
    Xs = np.zeros((n, p, p))
    idx = np.arange(p)
    Xs[:, idx, idx] = design.X
    return ObservationSet(Design.fixed(Xs), np.asarray(y, dtype=np.float64))


def theorem10_lambda(sigma: float, p: int, n: int, a: float = 1.0) -> float:
    """3 a sqrt(2) sigma sqrt(log p / n)."""
    if a < 1:
        raise InvalidParameterError("a must be >= 1")
    if p < 2 or n < 1 or sigma < 0:
        raise InvalidParameterError("need p >= 2, n >= 1 and sigma >= 0")
    return 3.0 * a * math.sqrt(2.0) * sigma * math.sqrt(math.log(p) / n)


def failure_probability(p: int, a: float = 1.0) -> float:
    """1 / (p^{a^2 - 1} sqrt(pi log p))."""
    return 1.0 / (p ** (a * a - 1) * math.sqrt(math.pi * math.log(p)))


# --- restricted eigenvalue -----------------------------------------------------

def _project_l1_ball(W: np.ndarray, radius: np.ndarray) -> np.ndarray:
    """Row-wise Euclidean projection onto {w : |w|_1 <= radius}."""
    absW = np.abs(W)
    inside = absW.sum(axis=1) <= radius
    if np.all(inside):
        return W
    mu = -np.sort(-absW, axis=1)
    css = np.cumsum(mu, axis=1)
    k = np.arange(1, W.shape[1] + 1)
    cond = mu - (css - radius[:, None]) / k > 0
    rho = W.shape[1] - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = (css[np.arange(W.shape[0]), rho] - radius) / (rho + 1)
    theta = np.maximum(theta, 0.0)
    out = np.sign(W) * np.maximum(absW - theta[:, None], 0.0)
    out[radius <= 0] = 0.0
    return np.where(inside[:, None], W, out)


def _cone_values(G: np.ndarray, J: tuple, V: np.ndarray, c0: float, iters: int = 2000) -> np.ndarray:
    """min over |w|_1 <= c0 |v|_1 of u^T G u with u_J = v, u_{J^c} = w, for each row v of V."""
    p = G.shape[0]
    Jc = [j for j in range(p) if j not in J]
    GJJ = G[np.ix_(J, J)]
    base = np.einsum("bi,ij,bj->b", V, GJJ, V)
    if not Jc:
        return base
    GcJ = G[np.ix_(Jc, J)]
    Gcc = G[np.ix_(Jc, Jc)]
    lin = V @ GcJ.T  # (B, |Jc|)
    radius = c0 * np.abs(V).sum(axis=1)
    L = 2.0 * float(np.linalg.norm(Gcc, 2))
    W = np.zeros((V.shape[0], len(Jc)))
    if L > 0:
        step = 1.0 / L
        for _ in range(iters):
            grad = 2.0 * (W @ Gcc + lin)
            W_next = _project_l1_ball(W - step * grad, radius)
            done = np.max(np.abs(W_next - W)) <= 1e-12
            W = W_next
            if done:
                break
    return base + 2.0 * np.einsum("bi,bi->b", W, lin) + np.einsum("bi,ij,bj->b", W, Gcc, W)


def _unit_rows(V: np.ndarray) -> np.ndarray:
    return V / np.linalg.norm(V, axis=1, keepdims=True)


def kappa_re(design: LinearDesign, s: int, c0: float = 5.0, budget: int = 1000, seed=0,
             refine_rounds: int = 20) -> float:
    """Upper estimate of the restricted eigenvalue kappa(s, c0).

    kappa(s, c0) = min over |J| <= s and u != 0 with |u_{J^c}|_1 <= c0 |u_J|_1
    of |X u|_2 / (sqrt(n) |u_J|_2). Only |J| = s is enumerated: enlarging J
    enlarges the cone and the denominator, so it can only lower the ratio.
    For each J the inner minimization over u_{J^c} is a convex QP solved by
    projected gradient; the outer minimization over unit u_J is sampled
    (``budget`` points) and then refined by local random search. The result
    is an upper bound on the true value up to solver accuracy.
    """
    p = design.p
    if p > 16 or s > 3:
        raise InvalidParameterError("kappa_re is brute force; needs p <= 16 and s <= 3")
    if not 1 <= s <= p:
        raise InvalidParameterError("need 1 <= s <= p")
    if budget < 1000:
        raise InvalidParameterError("budget must be at least 1000 samples per subset")
    if not c0 >= 0:
        raise InvalidParameterError("c0 must be nonnegative")
    G = design.gram
    rng = make_rng(seed)
    best = math.inf
    for J in itertools.combinations(range(p), s):
        if s == 1:
            V = np.array([[1.0], [-1.0]])
        else:
            V = _unit_rows(np.vstack([np.eye(s), -np.eye(s), rng.standard_normal((budget, s))]))
        vals = _cone_values(G, J, V, c0)
        if s > 1:
            order = np.argsort(vals)[:3]
            for start in order:
                v, fv = V[start], vals[start]
                radius = 0.5
                for _ in range(refine_rounds):
                    cand = _unit_rows(v + radius * rng.standard_normal((32, s)))
                    cv = _cone_values(G, J, cand, c0)
                    k = int(np.argmin(cv))
                    if cv[k] < fv:
                        v, fv = cand[k], cv[k]
                    else:
                        radius *= 0.5
                vals = np.append(vals, fv)
        best = min(best, float(np.min(vals)))
    return math.sqrt(max(best, 0.0))


# --- sharp oracle inequality ---------------------------------------------------

def wilson_standard_error(count: int, trials: int) -> float:
    """Half-width of the z = 1 Wilson score interval."""
    p = count / trials
    return math.sqrt(p * (1 - p) / trials + 1 / (4 * trials**2)) / (1 + 1 / trials)


@dataclass
class SharpOracleVerdict:
    trials: int
    p: int
    n: int
    sparsity: int
    a: float
    sigma: float
    lam: float
    kappa: float
    rhs: float
    violations: int
    violation_frac: float
    target: float
    wilson_se: float
    event_frac: float
    violations_on_event: int
    max_kkt: float

    @property
    def passed(self) -> bool:
        return self.violation_frac <= self.target + 3 * self.wilson_se

    def to_json(self) -> str:
        d = asdict(self)
        d["passed"] = self.passed
        return json.dumps(d, sort_keys=True)


def check_sharp_oracle(design: LinearDesign, beta_star, sigma: float, trials: int, seed: int,
                       a: float = 1.0, kappa: float | None = None, c0: float = 5.0) -> SharpOracleVerdict:
    """Simulate Gaussian responses and test the sharp inequality at beta = beta*.

    Per trial: (1/n)|X(beta_hat - beta*)|^2 <= C^2 sigma^2 M(beta*) log p / (kappa^2 n)
    with C = 3 a sqrt(2) and kappa = kappa(M(beta*), c0). The event
    |X^T xi / n|_inf <= lam / 3 under which the inequality is deterministic is
    tracked separately.
    """
    beta_star = np.asarray(beta_star, dtype=np.float64)
    n, p = design.n, design.p
    if beta_star.shape != (p,):
        raise DimensionError("beta_star has the wrong length")
    lam = theorem10_lambda(sigma, p, n, a)
    C = 3.0 * a * math.sqrt(2.0)
    s = int(np.count_nonzero(beta_star))
    if s == 0:
        kappa = 1.0 if kappa is None else kappa
    elif kappa is None:
        kappa = kappa_re(design, s, c0, seed=derive_seed(seed, 2**32))
    rhs = C**2 * sigma**2 * s * math.log(p) / (kappa**2 * n) if kappa > 0 else math.inf
    mean = design.X @ beta_star
    violations = on_event = events = 0
    max_kkt = 0.0
    for k in range(trials):
        xi = sigma * make_rng(derive_seed(seed, k)).standard_normal(n)
        y = mean + xi
        beta = lasso_solve(design, y, lam)
        max_kkt = max(max_kkt, kkt_residual(design, y, beta, lam))
        d = design.X @ (beta - beta_star)
        lhs = float(d @ d) / n
        bad = lhs > rhs * (1 + FLOAT_RTOL)
        event = float(np.max(np.abs(design.X.T @ xi))) / n <= lam / 3.0
        violations += bad
        events += event
        on_event += bad and event
    target = failure_probability(p, a)
    return SharpOracleVerdict(trials=trials, p=p, n=n, sparsity=s, a=a, sigma=sigma, lam=lam, kappa=kappa,
                              rhs=rhs, violations=violations, violation_frac=violations / trials, target=target,
                              wilson_se=wilson_standard_error(violations, trials), event_frac=events / trials,
                              violations_on_event=on_event, max_kkt=max_kkt)


# --- CSV I/O --------------------------------------------------------------------

def write_regression_csv(path, design: LinearDesign, y) -> None:
    """Header 'n p', then one row per sample: x_1, ..., x_p, y."""
    lines = [f"{design.n} {design.p}"]
    for row, v in zip(design.X, y):
        lines.append(",".join(f"{x:.17g}" for x in (*row, v)))
    Path(path).write_text("\n".join(lines) + "\n")


def read_regression_csv(path) -> tuple[LinearDesign, np.ndarray]:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise ParseError("empty file", 1)
    head = lines[0].replace(",", " ").split()
    try:
        n, p = int(head[0]), int(head[1])
    except (ValueError, IndexError):
        raise ParseError(f"expected 'n p' header, got {lines[0]!r}", 1) from None
    if n < 1 or p < 1 or len(head) != 2:
        raise ParseError(f"bad header {lines[0]!r}", 1)
    if len(lines) - 1 < n:
        raise ParseError(f"expected {n} rows", len(lines) + 1)
    data = np.empty((n, p + 1))
    for k in range(n):
        parts = lines[k + 1].split(",")
        if len(parts) != p + 1:
            raise ParseError(f"expected {p + 1} values", k + 2)
        try:
            data[k] = [float(x) for x in parts]
        except ValueError:
            raise ParseError(f"bad number in {lines[k + 1]!r}", k + 2) from None
    return LinearDesign(data[:, :p]), data[:, p]
