"""Sampling designs, noise models and observation sets for trace regression.

A sample is ``Y_i = <X_i, A0> + xi_i``. Five design kinds are supported:

``usr_completion``
    X_i uniform on the basis {e_j e_k^T}, drawn with replacement.
``column_mask``
    one uniformly chosen column carries a standard Gaussian vector.
``gaussian_full`` / ``rademacher_full``
    i.i.d. N(0, 1) or +-1 entries.
``fixed``
    an explicit, non-random list of design matrices.

Completion samples are stored as index pairs; every other kind stores the
dense design matrices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError, InvalidDesignError, InvalidParameterError, ParseError
from .linalg import as_matrix, format_float, format_matrix, parse_matrix, svd
from .rng import make_rng

DESIGN_KINDS = ("usr_completion", "column_mask", "gaussian_full", "rademacher_full", "fixed")
NOISE_KINDS = ("gaussian", "subexp", "bounded_sign", "none")


@dataclass(frozen=True)
class Design:
    kind: str
    m1: int
    m2: int
    X: np.ndarray | None = field(default=None, repr=False)
    mu_override: float | None = None

    def __post_init__(self):
        if self.kind not in DESIGN_KINDS:
            raise InvalidParameterError(f"unknown design kind {self.kind!r}")
        if self.m1 < 1 or self.m2 < 1:
            raise InvalidParameterError("design dimensions must be positive")
        if self.kind == "fixed":
            if self.X is None:
                raise InvalidParameterError("fixed design needs its design matrices")
            X = np.asarray(self.X, dtype=np.float64)
            if X.ndim != 3 or X.shape[1:] != (self.m1, self.m2) or X.shape[0] < 1:
                raise DimensionError(f"fixed design matrices must be (n, {self.m1}, {self.m2})")
            if not np.all(np.isfinite(X)):
                raise InvalidParameterError("fixed design has non-finite entries")
            object.__setattr__(self, "X", X)
        elif self.X is not None:
            raise InvalidParameterError(f"{self.kind} design is random; do not pass X")

    @classmethod
    def usr(cls, m1: int, m2: int) -> Design:
        return cls("usr_completion", m1, m2)

    @classmethod
    def fixed(cls, X, mu: float | None = None) -> Design:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 3:
            raise DimensionError("fixed design expects an (n, m1, m2) array")
        return cls("fixed", X.shape[1], X.shape[2], X=X, mu_override=mu)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.m1, self.m2)

    @property
    def is_completion(self) -> bool:
        return self.kind == "usr_completion"

    @property
    def mu(self) -> float | None:
        """Isometry factor: ||A||_{L2(Pi)}^2 = ||A||_2^2 / mu^2."""
        if self.kind == "usr_completion":
            return math.sqrt(self.m1 * self.m2)
        if self.kind == "column_mask":
            return math.sqrt(self.m2)
        if self.kind in ("gaussian_full", "rademacher_full"):
            return 1.0
        return self.mu_override

    def gram_apply(self, A: np.ndarray) -> np.ndarray:
        """The operator Q with <A, Q(B)> = <A, B>_{L2(Pi)}."""
        if self.kind == "usr_completion":
            return A / (self.m1 * self.m2)
        if self.kind == "column_mask":
            return A / self.m2
        if self.kind in ("gaussian_full", "rademacher_full"):
            return A.copy()
        inner = np.tensordot(self.X, A, axes=([1, 2], [0, 1]))
        return np.tensordot(inner, self.X, axes=(0, 0)) / self.X.shape[0]

    def curvature(self) -> float:
        """Largest eigenvalue of Q (so the smooth part of L_n is 2*curvature-smooth)."""
        if self.kind == "fixed":
            V = self.X.reshape(self.X.shape[0], -1)
            s = np.linalg.norm(V, 2)
            return float(s * s / self.X.shape[0])
        return 1.0 / self.mu**2


@dataclass(frozen=True)
class NoiseModel:
    """Noise law for ``xi_i``.

    ``subexp`` draws ``sigma * sign(g) * |g|**(2/alpha)`` with g ~ N(0, 1);
    alpha = 2 gives Gaussian noise. ``bounded_sign`` replaces the additive
    model: Y = eta with probability 1/2 + <A0, X>/(2 eta), else -eta.
    """

    kind: str = "gaussian"
    sigma: float = 1.0
    alpha: float = 2.0
    eta: float = 1.0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise InvalidParameterError(f"unknown noise kind {self.kind!r}")
        if self.kind in ("gaussian", "subexp") and not self.sigma > 0:
            raise InvalidParameterError("noise sigma must be positive")
        if self.kind == "subexp" and not self.alpha >= 1:
            raise InvalidParameterError("subexp tail exponent alpha must be >= 1")
        if self.kind == "bounded_sign" and not self.eta > 0:
            raise InvalidParameterError("bound eta must be positive")

    @classmethod
    def gaussian(cls, sigma: float) -> NoiseModel:
        return cls("gaussian", sigma=sigma)

    @classmethod
    def subexp(cls, sigma: float, alpha: float) -> NoiseModel:
        return cls("subexp", sigma=sigma, alpha=alpha)

    @classmethod
    def bounded_sign(cls, eta: float) -> NoiseModel:
        return cls("bounded_sign", eta=eta)

    @classmethod
    def none(cls) -> NoiseModel:
        return cls("none")

    @property
    def tail_alpha(self) -> float:
        if self.kind == "subexp":
            return self.alpha
        if self.kind == "gaussian":
            return 2.0
        return math.inf

    def additive_variance(self) -> float:
        """E xi^2 for the additive kinds (0 for ``none``)."""
        if self.kind == "gaussian":
            return self.sigma**2
        if self.kind == "subexp":
            q = 4.0 / self.alpha
            # E|g|^q = 2^{q/2} Gamma((q+1)/2) / sqrt(pi)
            return self.sigma**2 * 2 ** (q / 2) * math.gamma((q + 1) / 2) / math.sqrt(math.pi)
        if self.kind == "none":
            return 0.0
        raise InvalidParameterError("bounded_sign noise variance depends on A0; use response_variance")

    def moment_constants(self) -> dict:
        """Constants of the moment condition E exp(|xi|^alpha / s^alpha) < c_tilde, E xi^2 >= c1 s^2.

        With xi = sigma sign(g)|g|^{2/alpha}, |xi|^alpha / s^alpha = g^2 / 4 for
        s = sigma * 4^{1/alpha}, hence c_tilde = E exp(g^2/4) = sqrt(2).
        """
        if self.kind not in ("gaussian", "subexp"):
            raise InvalidParameterError("moment constants only defined for gaussian/subexp noise")
        alpha = self.tail_alpha
        scale = self.sigma * 4 ** (1 / alpha)
        return {"scale": scale, "alpha": alpha, "c_tilde": math.sqrt(2.0),
                "c1": self.additive_variance() / scale**2}

    def draw(self, mean: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        n = mean.shape[0]
        if self.kind == "none":
            return mean.copy()
        if self.kind == "gaussian":
            return mean + self.sigma * rng.standard_normal(n)
        if self.kind == "subexp":
            g = rng.standard_normal(n)
            return mean + self.sigma * np.sign(g) * np.abs(g) ** (2.0 / self.alpha)
        if np.max(np.abs(mean)) > self.eta * (1 + 1e-12):
            raise InvalidParameterError("bounded_sign noise needs |<A0, X>| <= eta")
        p = 0.5 + mean / (2 * self.eta)
        return np.where(rng.random(n) < p, self.eta, -self.eta)


@dataclass(frozen=True)
class ObservationSet:
    """The sample {(X_i, Y_i)}.

    Completion designs fill ``rows``/``cols``; the others fill ``X`` with an
    (n, m1, m2) stack (for ``fixed`` it is the design's own list).
    """

    design: Design
    y: np.ndarray
    rows: np.ndarray | None = None
    cols: np.ndarray | None = None
    X: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.float64)
        if y.ndim != 1 or y.size < 1:
            raise InvalidParameterError("an observation set needs n >= 1 responses")
        if not np.all(np.isfinite(y)):
            raise InvalidParameterError("responses must be finite")
        object.__setattr__(self, "y", y)
        d = self.design
        if d.is_completion:
            rows = np.asarray(self.rows, dtype=np.int64)
            cols = np.asarray(self.cols, dtype=np.int64)
            if rows.shape != y.shape or cols.shape != y.shape:
                raise DimensionError("rows, cols and y must have the same length")
            if rows.min() < 0 or rows.max() >= d.m1 or cols.min() < 0 or cols.max() >= d.m2:
                raise DimensionError("completion index out of range")
            object.__setattr__(self, "rows", rows)
            object.__setattr__(self, "cols", cols)
        else:
            X = d.X if (d.kind == "fixed" and self.X is None) else self.X
            if X is None:
                raise InvalidParameterError(f"{d.kind} observations need design matrices")
            X = np.asarray(X, dtype=np.float64)
            if X.shape != (y.size, d.m1, d.m2):
                raise DimensionError(f"design stack shape {X.shape} does not match n={y.size}")
            object.__setattr__(self, "X", X)

    @property
    def n(self) -> int:
        return int(self.y.size)

    @property
    def shape(self) -> tuple[int, int]:
        return self.design.shape

    def weighted_sum(self) -> np.ndarray:
        """sum_i Y_i X_i."""
        m1, m2 = self.shape
        if self.design.is_completion:
            flat = np.bincount(self.rows * m2 + self.cols, weights=self.y, minlength=m1 * m2)
            return flat.reshape(m1, m2)
        return np.tensordot(self.y, self.X, axes=(0, 0))

    def inner_products(self, A) -> np.ndarray:
        """<A, X_i> for every sample."""
        A = as_matrix(A)
        if A.shape != self.shape:
            raise DimensionError(f"shape mismatch: {A.shape} vs {self.shape}")
        if self.design.is_completion:
            return A[self.rows, self.cols]
        return np.tensordot(self.X, A, axes=([1, 2], [0, 1]))

    def design_matrices(self) -> np.ndarray:
        if not self.design.is_completion:
            return self.X
        m1, m2 = self.shape
        out = np.zeros((self.n, m1, m2))
        out[np.arange(self.n), self.rows, self.cols] = 1.0
        return out

    def equals(self, other: ObservationSet) -> bool:
        if self.design.kind != other.design.kind or self.shape != other.shape:
            return False
        if not np.array_equal(self.y, other.y):
            return False
        if self.design.is_completion:
            return np.array_equal(self.rows, other.rows) and np.array_equal(self.cols, other.cols)
        return np.array_equal(self.X, other.X)


def generate_ground_truth(m1: int, m2: int, r: int, a: float, seed) -> np.ndarray:
    """Random rank-r matrix U V^T with uniform[-1, 1] factors, scaled so max|a0(i,j)| = a."""
    if min(m1, m2, r) < 1:
        raise InvalidParameterError("m1, m2 and r must be positive")
    if r > min(m1, m2):
        raise InvalidParameterError(f"rank {r} exceeds min({m1}, {m2})")
    if not a > 0:
        raise InvalidParameterError("entry bound a must be positive")
    rng = make_rng(seed)
    for _ in range(100):
        U = rng.uniform(-1.0, 1.0, size=(m1, r))
        V = rng.uniform(-1.0, 1.0, size=(m2, r))
        A0 = U @ V.T
        peak = np.max(np.abs(A0))
        if peak == 0:
            continue
        A0 *= a / peak
        if svd(A0).numerical_rank == r:
            return A0
    raise InvalidParameterError("could not draw a full-rank factorization")  # pragma: no cover


def sample_observations(A0, design: Design, noise: NoiseModel, n: int, seed) -> ObservationSet:
    """Draw n i.i.d. pairs (X_i, Y_i). Design draws precede noise draws."""
    A0 = as_matrix(A0, "A0")
    if A0.shape != design.shape:
        raise DimensionError(f"A0 shape {A0.shape} does not match design {design.shape}")
    if n < 1:
        raise InvalidParameterError("n must be >= 1")
    if noise.kind == "bounded_sign" and np.max(np.abs(A0)) > noise.eta and design.is_completion:
        raise InvalidParameterError("bounded_sign noise needs max|a0(i,j)| <= eta")
    rng = make_rng(seed)
    m1, m2 = design.shape
    kind = design.kind
    if kind == "usr_completion":
        flat = rng.integers(0, m1 * m2, size=n)
        rows, cols = np.divmod(flat, m2)
        y = noise.draw(A0[rows, cols], rng)
        return ObservationSet(design, y, rows=rows, cols=cols)
    if kind == "fixed":
        if n != design.X.shape[0]:
            raise InvalidParameterError(f"fixed design has {design.X.shape[0]} matrices, asked for n={n}")
        X = design.X
    elif kind == "column_mask":
        X = np.zeros((n, m1, m2))
        which = rng.integers(0, m2, size=n)
        X[np.arange(n), :, which] = rng.standard_normal((n, m1))
    elif kind == "gaussian_full":
        X = rng.standard_normal((n, m1, m2))
    else:
        X = rng.choice(np.array([-1.0, 1.0]), size=(n, m1, m2))
    mean = np.tensordot(X, A0, axes=([1, 2], [0, 1]))
    y = noise.draw(mean, rng)
    return ObservationSet(design, y, X=None if kind == "fixed" else X)


def l2_pi_norm_sq(A, design: Design) -> float:
    """Exact ||A||^2_{L2(Pi)} for the design's sampling law."""
    A = as_matrix(A)
    if A.shape != design.shape:
        raise DimensionError(f"shape mismatch: {A.shape} vs {design.shape}")
    if design.kind == "fixed":
        ip = np.tensordot(design.X, A, axes=([1, 2], [0, 1]))
        return float(np.mean(ip * ip))
    return float(np.sum(A * A)) / design.mu**2


def prediction_risk(A, A0, design: Design, noise_var: float) -> float:
    """R(A) = ||A - A0||^2_{L2(Pi)} + noise variance (model-based population risk)."""
    if noise_var < 0:
        raise InvalidParameterError("noise_var must be nonnegative")
    A = as_matrix(A, "A")
    A0 = as_matrix(A0, "A0")
    return l2_pi_norm_sq(A - A0, design) + noise_var


def response_variance(A0, design: Design, noise: NoiseModel) -> float:
    """Average conditional variance E[(Y - <A0, X>)^2]."""
    if noise.kind != "bounded_sign":
        return noise.additive_variance()
    return noise.eta**2 - l2_pi_norm_sq(A0, design)


# --- file format -----------------------------------------------------------

def format_observations(obs: ObservationSet) -> str:
    m1, m2 = obs.shape
    if obs.design.is_completion:
        lines = [f"USR {m1} {m2} {obs.n}"]
        lines.extend(f"{i} {j} {format_float(v)}" for i, j, v in zip(obs.rows, obs.cols, obs.y))
        return "\n".join(lines) + "\n"
    header = f"FULL {m1} {m2} {obs.n}"
    if obs.design.kind != "fixed":
        header += f" {obs.design.kind}"
    parts = [header + "\n"]
    for Xi, v in zip(obs.X, obs.y):
        parts.append(format_matrix(Xi))
        parts.append(format_float(v) + "\n")
    return "".join(parts)


def parse_observations(text: str) -> ObservationSet:
    lines = text.splitlines()
    if not lines:
        raise ParseError("empty file", 1)
    head = lines[0].split()
    if len(head) < 4 or head[0] not in ("USR", "FULL"):
        raise ParseError(f"bad header {lines[0]!r}", 1)
    try:
        m1, m2, n = (int(x) for x in head[1:4])
    except ValueError:
        raise ParseError(f"bad header {lines[0]!r}", 1) from None
    if m1 < 1 or m2 < 1:
        raise ParseError("dimensions must be positive", 1)
    if n < 1:
        raise ParseError("observation set needs n >= 1 records", 1)
    if head[0] == "USR":
        if len(head) != 4:
            raise ParseError(f"bad header {lines[0]!r}", 1)
        body = lines[1:]
        if len(body) < n:
            raise ParseError(f"expected {n} records, found {len(body)}", len(lines) + 1)
        rows = np.empty(n, dtype=np.int64)
        cols = np.empty(n, dtype=np.int64)
        y = np.empty(n)
        for k in range(n):
            lineno = k + 2
            parts = body[k].split()
            if len(parts) != 3:
                raise ParseError(f"expected 'i j y', got {body[k]!r}", lineno)
            try:
                i, j, v = int(parts[0]), int(parts[1]), float(parts[2])
            except ValueError:
                raise ParseError(f"bad record {body[k]!r}", lineno) from None
            if not (0 <= i < m1 and 0 <= j < m2):
                raise ParseError(f"index ({i}, {j}) out of range for {m1}x{m2}", lineno)
            if not math.isfinite(v):
                raise ParseError("non-finite response", lineno)
            rows[k], cols[k], y[k] = i, j, v
        if any(s.strip() for s in body[n:]):
            raise ParseError("trailing content after records", n + 2)
        return ObservationSet(Design.usr(m1, m2), y, rows=rows, cols=cols)

    kind = head[4] if len(head) == 5 else "fixed"
    if len(head) > 5 or kind not in DESIGN_KINDS or kind == "usr_completion":
        raise ParseError(f"bad header {lines[0]!r}", 1)
    X = np.empty((n, m1, m2))
    y = np.empty(n)
    pos = 1
    for k in range(n):
        Xi, pos = parse_matrix(lines, pos)
        if Xi.shape != (m1, m2):
            raise ParseError(f"record {k} has shape {Xi.shape}, expected {(m1, m2)}", pos - m1)
        if pos >= len(lines):
            raise ParseError("missing response line", pos + 1)
        try:
            y[k] = float(lines[pos])
        except ValueError:
            raise ParseError(f"bad response {lines[pos]!r}", pos + 1) from None
        X[k] = Xi
        pos += 1
    if any(s.strip() for s in lines[pos:]):
        raise ParseError("trailing content after records", pos + 1)
    if kind == "fixed":
        return ObservationSet(Design.fixed(X), y)
    return ObservationSet(Design(kind, m1, m2), y, X=X)


def write_observations(path, obs: ObservationSet) -> None:
    Path(path).write_text(format_observations(obs))


def read_observations(path) -> ObservationSet:
    return parse_observations(Path(path).read_text())


def ensure_completion(obs: ObservationSet) -> None:
    if not obs.design.is_completion:
        raise InvalidDesignError(f"operation requires a usr_completion design, got {obs.design.kind}")
