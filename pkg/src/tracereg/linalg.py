"""Dense matrix helpers: SVD, Schatten norms and singular value soft-thresholding.

Matrices are plain 2-D ``numpy.ndarray`` objects of dtype float64. The
functions here validate their inputs (finite, two-dimensional) and never
mutate them.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, InvalidParameterError, NumericalError, ParseError

__all__ = [
    "SvdFactors",
    "as_matrix",
    "default_rank_tol",
    "svd",
    "singular_values",
    "schatten_norm",
    "nuclear_norm",
    "frobenius_norm",
    "operator_norm",
    "soft_threshold_svd",
    "trace_inner",
    "basis_matrix",
    "format_float",
    "write_matrix",
    "read_matrix",
    "format_matrix",
    "parse_matrix",
]


def as_matrix(A, name: str = "matrix") -> np.ndarray:
    """Return ``A`` as a finite float64 2-D array with at least one row and column."""
    arr = np.asarray(A, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionError(f"{name} must have at least one row and column, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidParameterError(f"{name} has non-finite entries")
    return arr


def _same_shape(A: np.ndarray, B: np.ndarray) -> None:
    if A.shape != B.shape:
        raise DimensionError(f"shape mismatch: {A.shape} vs {B.shape}")


def default_rank_tol(shape: tuple[int, int], sigma_max: float) -> float:
    return max(shape) * sigma_max * 1e-12


@dataclass(frozen=True)
class SvdFactors:
    """Full thin SVD ``A = u @ diag(sigma) @ v.T``.

    ``u`` has shape (m1, k) and ``v`` has shape (m2, k) with
    k = min(m1, m2); columns are the singular vectors.
    """

    sigma: np.ndarray
    u: np.ndarray
    v: np.ndarray
    rank_tol: float

    @property
    def numerical_rank(self) -> int:
        return int(np.count_nonzero(self.sigma > self.rank_tol))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.u.shape[0], self.v.shape[0])

    def reconstruct(self, sigma: np.ndarray | None = None) -> np.ndarray:
        s = self.sigma if sigma is None else np.asarray(sigma, dtype=np.float64)
        return (self.u * s) @ self.v.T

    def support(self) -> tuple[np.ndarray, np.ndarray]:
        """Orthonormal bases of the left and right support spaces (S1, S2)."""
        r = self.numerical_rank
        return self.u[:, :r], self.v[:, :r]


def svd(A, rank_tol: float | None = None) -> SvdFactors:
    """Thin SVD with min(m1, m2) singular values.

    ``rank_tol`` defaults to ``max(m1, m2) * sigma_1 * 1e-12``.
    """
    A = as_matrix(A)
    if rank_tol is not None and rank_tol < 0:
        raise InvalidParameterError(f"rank_tol must be nonnegative, got {rank_tol}")
    try:
        u, s, vt = np.linalg.svd(A, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD did not converge: {exc}") from exc
    if not (np.all(np.isfinite(s)) and np.all(np.isfinite(u)) and np.all(np.isfinite(vt))):
        raise NumericalError("SVD produced non-finite factors")
    if rank_tol is None:
        rank_tol = default_rank_tol(A.shape, float(s[0]) if s.size else 0.0)
    return SvdFactors(sigma=s, u=u, v=vt.T, rank_tol=float(rank_tol))


def singular_values(A) -> np.ndarray:
    A = as_matrix(A)
    try:
        return np.linalg.svd(A, compute_uv=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD did not converge: {exc}") from exc


def schatten_norm(A, p: float) -> float:
    """Schatten-p (quasi-)norm; ``p=np.inf`` gives the operator norm."""
    if not p > 0:
        raise InvalidParameterError(f"Schatten index must be positive, got {p}")
    s = singular_values(A)
    if np.isinf(p):
        return float(s[0])
    if p == 1:
        return float(s.sum())
    if p == 2:
        return float(np.sqrt(np.sum(s * s)))
    return float(np.sum(s**p) ** (1.0 / p))


def nuclear_norm(A) -> float:
    return schatten_norm(A, 1)


def frobenius_norm(A) -> float:
    return float(np.linalg.norm(as_matrix(A)))


def operator_norm(A) -> float:
    return schatten_norm(A, np.inf)


def soft_threshold_svd(A, threshold: float) -> np.ndarray:
    """Replace every singular value s of ``A`` by max(s - threshold, 0).

    This is the proximal map of ``threshold * ||.||_1`` (nuclear norm) in the
    Frobenius geometry. Values equal to the threshold go to zero.
    """
    if not threshold >= 0:
        raise InvalidParameterError(f"threshold must be nonnegative, got {threshold}")
    f = svd(A)
    shrunk = np.where(f.sigma > threshold, f.sigma - threshold, 0.0)
    return f.reconstruct(shrunk)


def trace_inner(A, B) -> float:
    """<A, B> = tr(A^T B)."""
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    _same_shape(A, B)
    return float(np.vdot(A, B))


def basis_matrix(m1: int, m2: int, i: int, j: int) -> np.ndarray:
    """e_i e_j^T in R^{m1 x m2} with 0-based indices."""
    if not (0 <= i < m1 and 0 <= j < m2):
        raise DimensionError(f"index ({i}, {j}) out of range for {m1}x{m2}")
    E = np.zeros((m1, m2))
    E[i, j] = 1.0
    return E


# --- text format -----------------------------------------------------------

def format_float(x: float) -> str:
    return f"{float(x):.17g}"


def format_matrix(A) -> str:
    A = as_matrix(A)
    lines = [f"{A.shape[0]} {A.shape[1]}"]
    lines.extend(" ".join(format_float(x) for x in row) for row in A)
    return "\n".join(lines) + "\n"


def _parse_header(line: str, lineno: int) -> tuple[int, int]:
    parts = line.split()
    if len(parts) != 2:
        raise ParseError(f"expected 'm1 m2' header, got {line!r}", lineno)
    try:
        m1, m2 = int(parts[0]), int(parts[1])
    except ValueError:
        raise ParseError(f"non-integer dimensions in {line!r}", lineno) from None
    if m1 < 1 or m2 < 1:
        raise ParseError(f"dimensions must be positive, got {m1} {m2}", lineno)
    return m1, m2


def parse_matrix(lines: list[str], start: int = 0) -> tuple[np.ndarray, int]:
    """Parse one matrix block from ``lines[start:]``.

    Returns the matrix and the index of the first unconsumed line. Line
    numbers in errors are 1-based.
    """
    if start >= len(lines):
        raise ParseError("missing matrix header", start + 1)
    m1, m2 = _parse_header(lines[start], start + 1)
    rows = []
    for k in range(m1):
        idx = start + 1 + k
        if idx >= len(lines):
            raise ParseError(f"expected {m1} matrix rows, file ended", idx + 1)
        parts = lines[idx].split()
        if len(parts) != m2:
            raise ParseError(f"expected {m2} values, got {len(parts)}", idx + 1)
        try:
            row = [float(x) for x in parts]
        except ValueError:
            raise ParseError(f"bad float in {lines[idx]!r}", idx + 1) from None
        if not all(np.isfinite(row)):
            raise ParseError("non-finite entry", idx + 1)
        rows.append(row)
    return np.array(rows, dtype=np.float64), start + 1 + m1


def write_matrix(path, A) -> None:
    Path(path).write_text(format_matrix(A))


def read_matrix(path) -> np.ndarray:
    lines = Path(path).read_text().splitlines()
    A, end = parse_matrix(lines)
    if any(line.strip() for line in lines[end:]):
        raise ParseError("trailing content after matrix", end + 1)
    return A
