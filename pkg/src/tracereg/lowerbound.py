"""Hypothesis families used by the minimax lower-bound arguments.

A packing is a set of binary m1 x r tiles (entries 0 or ``amplitude``)
with pairwise Hamming distance >= m1 r / 8, always containing the zero
tile. Each tile is repeated floor(m2 / r) times side by side and padded
with zero columns, which keeps the rank at most r. The module also
computes the Kullback-Leibler divergences between the observation laws.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from .designs import Design, l2_pi_norm_sq
from .errors import InvalidParameterError, ShortfallError
from .linalg import as_matrix, svd, write_matrix
from .rng import make_rng


@dataclass(frozen=True)
class PackingConfig:
    """``model='gaussian'`` uses sigma ^ a as the scale, ``'bounded'`` uses eta."""

    m1: int
    m2: int
    r: int
    n: int
    gamma: float = 0.5
    model: str = "gaussian"
    sigma: float = 1.0
    a: float = 1.0
    eta: float = 1.0
    mu: float | None = None  # None: sqrt(m1 m2), uniform completion
    delta_r: float = 0.0

    def __post_init__(self):
        if min(self.m1, self.m2, self.r, self.n) < 1:
            raise InvalidParameterError("m1, m2, r and n must be positive")
        if self.r > min(self.m1, self.m2):
            raise InvalidParameterError("r must not exceed min(m1, m2)")
        if self.model not in ("gaussian", "bounded"):
            raise InvalidParameterError(f"unknown model {self.model!r}")
        if not 0 < self.gamma <= 1:
            raise InvalidParameterError("gamma must lie in (0, 1]")
        if self.model == "bounded" and self.gamma > 0.5:
            raise InvalidParameterError("bounded model needs gamma <= 1/2")
        if not 0 <= self.delta_r < 1:
            raise InvalidParameterError("delta_r must lie in [0, 1)")
        if self.model == "gaussian" and self.amplitude > self.a:
            raise InvalidParameterError(f"amplitude {self.amplitude:.4g} exceeds entry bound a={self.a}")
        if self.model == "bounded" and self.amplitude > self.eta / 2:
            raise InvalidParameterError(f"amplitude {self.amplitude:.4g} exceeds eta/2")

    @property
    def mu_value(self) -> float:
        return math.sqrt(self.m1 * self.m2) if self.mu is None else self.mu

    @property
    def scale(self) -> float:
        return min(self.sigma, self.a) if self.model == "gaussian" else self.eta

    @property
    def amplitude(self) -> float:
        return self.gamma * self.scale * math.sqrt(self.mu_value**2 * self.r / (self.m2 * self.n))

    @property
    def target_log2_card(self) -> float:
        return self.r * self.m1 / 8

    @property
    def target_cardinality(self) -> int:
        return math.ceil(2.0**self.target_log2_card) + 1

    @property
    def min_hamming(self) -> int:
        return math.ceil(self.m1 * self.r / 8)

    @property
    def copies(self) -> int:
        return self.m2 // self.r

    def separation_bound(self) -> float:
        """(gamma^2/16) scale^2 mu^2 m1 r / n, the guaranteed squared Frobenius gap."""
        return self.gamma**2 / 16 * self.scale**2 * self.mu_value**2 * self.m1 * self.r / self.n

    def l2_separation_bound(self) -> float:
        """Same gap in the L2(Pi) norm under restricted isometry with constant delta_r."""
        return (1 - self.delta_r) ** 2 * self.gamma**2 / 16 * self.scale**2 * self.m1 * self.r / self.n

    def with_gamma(self, gamma: float) -> PackingConfig:
        d = dict(self.__dict__)
        d["gamma"] = gamma
        return PackingConfig(**d)


def expand_tile(tile: np.ndarray, cfg: PackingConfig) -> np.ndarray:
    A = np.zeros((cfg.m1, cfg.m2))
    block = tile.astype(np.float64) * cfg.amplitude
    for k in range(cfg.copies):
        A[:, k * cfg.r:(k + 1) * cfg.r] = block
    return A


@dataclass
class Packing:
    cfg: PackingConfig
    tiles: np.ndarray  # (card, m1, r) of 0/1
    attempts: int
    matrices: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if not self.matrices:
            self.matrices = [expand_tile(t, self.cfg) for t in self.tiles]

    @property
    def cardinality(self) -> int:
        return len(self.tiles)

    def at_gamma(self, gamma: float) -> Packing:
        return Packing(self.cfg.with_gamma(gamma), self.tiles, self.attempts)

    def pairwise_hamming(self) -> np.ndarray:
        flat = self.tiles.reshape(len(self.tiles), -1).astype(np.int64)
        return np.sum(flat[:, None, :] != flat[None, :, :], axis=2)

    def pairwise_frob_sq(self) -> np.ndarray:
        M = np.stack(self.matrices).reshape(len(self.matrices), -1)
        sq = np.sum(M * M, axis=1)
        D = sq[:, None] + sq[None, :] - 2 * M @ M.T
        return np.maximum(D, 0.0)

    def min_pairwise(self, D: np.ndarray) -> float:
        off = D[~np.eye(len(D), dtype=bool)]
        return float(off.min()) if off.size else math.inf

    def index(self) -> dict:
        return {"cardinality": self.cardinality, "amplitude": self.cfg.amplitude, "gamma": self.cfg.gamma,
                "min_pairwise_frob_sq": self.min_pairwise(self.pairwise_frob_sq())}

    def dump(self, directory) -> None:
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        width = len(str(self.cardinality))
        for k, A in enumerate(self.matrices):
            write_matrix(out / f"matrix_{k:0{width}d}.txt", A)
        (out / "index.json").write_text(json.dumps(self.index(), indent=2, sort_keys=True) + "\n")


def build_packing(cfg: PackingConfig, seed, max_attempts: int = 10**5) -> Packing:
    """Randomized greedy Varshamov-Gilbert selection.

    Draws uniform binary tiles and keeps those at Hamming distance >=
    ceil(m1 r / 8) from all kept ones, starting from the zero tile, until
    the target cardinality ceil(2^{r m1 / 8}) + 1 is met. Tiles are returned
    in lexicographic order of their bits.
    """
    if cfg.m1 * cfg.r > 64:
        raise InvalidParameterError("packing search is limited to m1 * r <= 64")
    rng = make_rng(seed)
    bits = cfg.m1 * cfg.r
    target = cfg.target_cardinality
    dmin = cfg.min_hamming
    kept = [np.zeros(bits, dtype=np.int8)]
    attempts = 0
    while len(kept) < target and attempts < max_attempts:
        attempts += 1
        cand = rng.integers(0, 2, size=bits, dtype=np.int8)
        if all(int(np.count_nonzero(cand != k)) >= dmin for k in kept):
            kept.append(cand)
    if len(kept) < target:
        raise ShortfallError(f"packing reached {len(kept)} of {target} after {attempts} draws",
                             achieved=len(kept), target=target)
    kept.sort(key=lambda b: tuple(b.tolist()))
    tiles = np.stack(kept).reshape(-1, cfg.m1, cfg.r)
    return Packing(cfg, tiles, attempts)


def kl_gaussian(A, design: Design, sigma: float, n: int) -> float:
    """K(P_0, P_A) = n ||A||^2_{L2(Pi)} / (2 sigma^2) for Gaussian noise."""
    if not sigma > 0:
        raise InvalidParameterError("sigma must be positive")
    return n / (2.0 * sigma**2) * l2_pi_norm_sq(A, design)


@dataclass
class SignKL:
    kl: float
    stated_bound: float
    stated_bound_holds: bool
    corrected_bound: float
    corrected_bound_holds: bool


def kl_sign(A, eta: float, n: int) -> SignKL:
    """Exact KL between the +-eta response laws at 0 and at A (uniform completion).

    Sums over all m1 m2 sampling outcomes. ``stated_bound`` is
    n ||A||^2_{L2(Pi)} / (2 eta^2); it relies on -log(1+u) <= -u + u^2/2, which
    fails for u < 0, so the exact KL exceeds it whenever A != 0.
    ``corrected_bound`` is 4/3 of it, from -log(1-x) <= x/(1-x) with x <= 1/4.
    """
    A = as_matrix(A, "A")
    if not eta > 0:
        raise InvalidParameterError("eta must be positive")
    if np.max(np.abs(A)) > eta / 2:
        raise InvalidParameterError("entries must satisfy |a(i,j)| <= eta/2 so that p_A lies in [1/4, 3/4]")
    pA = 0.5 + A / (2.0 * eta)
    terms = 0.5 * np.log(0.5 / pA) + 0.5 * np.log(0.5 / (1.0 - pA))
    kl = n * float(np.mean(terms))
    stated = n / (2.0 * eta**2) * float(np.mean(A * A))
    corrected = 4.0 / 3.0 * stated
    return SignKL(kl=kl, stated_bound=stated, stated_bound_holds=kl <= stated,
                  corrected_bound=corrected, corrected_bound_holds=kl <= corrected)


def packing_kls(packing: Packing) -> np.ndarray:
    cfg = packing.cfg
    if cfg.model == "gaussian":
        design = Design.usr(cfg.m1, cfg.m2) if cfg.mu is None else None
        if design is None:
            # general isometric design: ||A||_{L2(Pi)}^2 = ||A||_2^2 / mu^2
            return np.array([cfg.n / (2 * cfg.sigma**2) * float(np.sum(A * A)) / cfg.mu**2
                             for A in packing.matrices])
        return np.array([kl_gaussian(A, design, cfg.sigma, cfg.n) for A in packing.matrices])
    return np.array([kl_sign(A, cfg.eta, cfg.n).kl for A in packing.matrices])


def kl_condition(packing: Packing, alpha: float = 1 / 16) -> tuple[bool, float, float]:
    """(holds, average KL over Card - 1, alpha log(Card - 1))."""
    card = packing.cardinality
    if card < 3:
        raise InvalidParameterError("KL condition needs at least 3 hypotheses")
    avg = float(np.sum(packing_kls(packing))) / (card - 1)
    rhs = alpha * math.log(card - 1)
    return avg <= rhs, avg, rhs


def largest_gamma(packing: Packing, alpha: float = 1 / 16, xtol: float = 1e-12) -> float:
    """Largest admissible gamma satisfying the KL condition, by root bracketing."""
    cfg = packing.cfg
    gmax = 0.5 if cfg.model == "bounded" else 1.0
    unit_amp = cfg.amplitude / cfg.gamma
    cap = (cfg.a if cfg.model == "gaussian" else cfg.eta / 2) / unit_amp
    gmax = min(gmax, cap)

    def f(g):
        return kl_condition(packing.at_gamma(g), alpha)[1] - alpha * math.log(packing.cardinality - 1)

    if f(gmax) <= 0:
        return gmax
    g = float(brentq(f, xtol, gmax, xtol=xtol))
    while f(g) > 0:  # land on the feasible side of the root
        g -= xtol
    return g


def verify_packing(packing: Packing, rank_tol: float | None = None) -> dict:
    """Exhaustive pairwise checks; every entry of the returned dict should be True."""
    cfg = packing.cfg
    H = packing.pairwise_hamming()
    D = packing.pairwise_frob_sq()
    off = ~np.eye(packing.cardinality, dtype=bool)
    bound = cfg.separation_bound()
    entry_cap = cfg.a if cfg.model == "gaussian" else cfg.eta
    ranks_ok = all(svd(A, rank_tol).numerical_rank <= cfg.r if np.any(A) else True for A in packing.matrices)
    diff_ranks_ok = all(
        svd(packing.matrices[i] - packing.matrices[j], rank_tol).numerical_rank <= cfg.r
        for i in range(packing.cardinality) for j in range(i + 1, packing.cardinality)
    )
    return {
        "cardinality": packing.cardinality >= cfg.target_cardinality,
        "contains_zero": any(not np.any(A) for A in packing.matrices),
        "hamming": bool(np.all(H[off] >= cfg.min_hamming)),
        "frobenius": bool(np.all(D[off] >= bound * (1 - 1e-12))),
        "entries": all(float(np.max(np.abs(A))) <= entry_cap for A in packing.matrices),
        "entry_values": all(np.all(np.isin(A, [0.0, cfg.amplitude])) for A in packing.matrices),
        "rank": ranks_ok,
        "difference_rank": diff_ranks_ok,
    }
