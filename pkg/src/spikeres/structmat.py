"""Checkerboard matrices and Pfaffians.

Index parity follows 1-based conventions: entry ``(i, j)`` is an *odd*
position when ``i + j`` is odd, which in 0-based numpy indexing is the same
test since both indices shift by one.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations

import numpy as np

__all__ = [
    "CheckerboardReport",
    "PreconditionError",
    "is_checkerboard",
    "odd_parity_mask",
    "pfaffian",
    "inverse_corner_signs",
    "alternating_pattern_defect",
]


class PreconditionError(ValueError):
    """A mathematical hypothesis required by an operation does not hold.

    ``hypothesis`` is a short machine-readable name of the failed condition.
    """

    def __init__(self, hypothesis: str, message: str):
        super().__init__(f"[{hypothesis}] {message}")
        self.hypothesis = hypothesis


@dataclass(frozen=True)
class CheckerboardReport:
    is_checkerboard: bool
    max_odd_parity_entry: float
    tol: float

    def __bool__(self) -> bool:
        return self.is_checkerboard


def _square(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix entries must be finite")
    return A


def odd_parity_mask(n: int) -> np.ndarray:
    i, j = np.indices((n, n))
    return (i + j) % 2 == 1


def is_checkerboard(A, tol: float | None = None) -> CheckerboardReport:
    """Check that every entry with ``i + j`` odd vanishes.

    Parameters
    ----------
    A : array_like
        Square matrix.
    tol : float, optional
        Absolute tolerance.  Defaults to ``1e-10 * max|A|``.
    """
    A = _square(A)
    if tol is None:
        tol = 1e-10 * (float(np.max(np.abs(A))) if A.size else 0.0)
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    odd = np.abs(A[odd_parity_mask(A.shape[0])])
    worst = float(odd.max()) if odd.size else 0.0
    tol = float(tol)
    return CheckerboardReport(bool(worst <= tol), worst, tol)


# --------------------------------------------------------------------------
# Pfaffian


def _pfaffian_expand(A: np.ndarray) -> float:
    n = A.shape[0]
    if n == 0:
        return 1.0
    total = 0.0
    rest = list(range(1, n))
    for k, j in enumerate(rest):
        if A[0, j] == 0:
            continue
        keep = [m for m in rest if m != j]
        sub = A[np.ix_(keep, keep)]
        total += (-1) ** k * A[0, j] * _pfaffian_expand(sub)
    return float(total)


def _pfaffian_parlett_reid(A: np.ndarray) -> float:
    """Skew LTL^T elimination with partial pivoting."""
    A = A.copy()
    n = A.shape[0]
    pf = 1.0
    for k in range(0, n - 1, 2):
        kp = k + 1 + int(np.argmax(np.abs(A[k + 1:, k])))
        if kp != k + 1:
            A[[k + 1, kp], :] = A[[kp, k + 1], :]
            A[:, [k + 1, kp]] = A[:, [kp, k + 1]]
            pf = -pf
        if A[k + 1, k] == 0.0:
            return 0.0
        pf *= A[k, k + 1]
        if k + 2 < n:
            tau = A[k, k + 2:] / A[k, k + 1]
            A[k + 2:, k + 2:] += np.outer(tau, A[k + 2:, k + 1])
            A[k + 2:, k + 2:] -= np.outer(A[k + 2:, k + 1], tau)
    return float(pf)


def pfaffian(A, *, method: str = "auto") -> float:
    """Pfaffian of an even-dimensional skew-symmetric matrix.

    Small matrices (dimension <= 4) use the cofactor expansion along the
    first row; larger ones use a pivoted skew-symmetric elimination.

    Raises
    ------
    ValueError
        If the dimension is odd or the matrix is not skew-symmetric.
    """
    A = _square(A)
    n = A.shape[0]
    if n % 2:
        raise ValueError("pfaffian undefined for odd dimension")
    scale = float(np.linalg.norm(A)) if n else 0.0
    if np.linalg.norm(A + A.T) > 1e-10 * scale:
        raise ValueError("pfaffian requires a skew-symmetric matrix")
    if method == "auto":
        method = "expand" if n <= 4 else "elimination"
    if method == "expand":
        return _pfaffian_expand(A)
    if method == "elimination":
        return _pfaffian_parlett_reid(A) if n else 1.0
    raise ValueError(f"unknown method {method!r}")


def _pfaffian_bruteforce(A) -> float:
    """Pfaffian from the perfect-matching sum; test oracle for tiny sizes."""
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    total = 0.0
    for perm in permutations(range(n)):
        if any(perm[2 * k] > perm[2 * k + 1] for k in range(n // 2)):
            continue
        if any(perm[2 * k] > perm[2 * k + 2] for k in range(n // 2 - 1)):
            continue
        inv = sum(1 for a in range(n) for b in range(a + 1, n) if perm[a] > perm[b])
        term = (-1) ** inv
        for k in range(n // 2):
            term *= A[perm[2 * k], perm[2 * k + 1]]
        total += term
    return total


# --------------------------------------------------------------------------
# inverse corners


def alternating_pattern_defect(A) -> float:
    """Largest relative violation of ``a_ij = (-1)**((i-j)/2) a_mm``, ``m=(i+j)/2``.

    Only positions with ``i + j`` even are tested.
    """
    A = _square(A)
    n = A.shape[0]
    scale = max(float(np.max(np.abs(A))), np.finfo(float).tiny)
    worst = 0.0
    for i in range(n):
        for j in range(n):
            if (i + j) % 2:
                continue
            m = (i + j) // 2
            expect = (-1) ** ((i - j) // 2) * A[m, m]
            worst = max(worst, abs(A[i, j] - expect) / scale)
    return worst


def inverse_corner_signs(A, *, tol: float = 1e-10) -> tuple[float, float]:
    """Corner entries ``(b_{1,m}, b_{m,m})`` of ``B = inv(A)`` for odd size m.

    The hypotheses are checked in turn and a :class:`PreconditionError`
    names the first one that fails.  Under them both entries are positive.
    """
    A = _square(A)
    m = A.shape[0]
    if m % 2 != 1:
        raise PreconditionError("odd_size", f"matrix size must be odd, got {m}")
    scale = float(np.max(np.abs(A)))
    if np.max(np.abs(A - A.T)) > tol * scale:
        raise PreconditionError("symmetric", "matrix is not symmetric")
    rep = is_checkerboard(A, tol * scale)
    if not rep:
        raise PreconditionError(
            "checkerboard", f"odd-parity entry of size {rep.max_odd_parity_entry:.3g}")
    defect = alternating_pattern_defect(A)
    if defect > tol:
        raise PreconditionError(
            "alternating_pattern", f"even-parity pattern violated (rel {defect:.3g})")
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        raise PreconditionError("positive_definite", "matrix is not positive definite")
    e_last = np.zeros(m)
    e_last[-1] = 1.0
    y = np.linalg.solve(L, e_last)
    col = np.linalg.solve(L.T, y)
    return float(col[0]), float(col[-1])
