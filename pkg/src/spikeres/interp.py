"""Vandermonde and Hermite (confluent Vandermonde) matrices.

Lagrange and Hermite interpolation coefficients are obtained by expanding the
interpolation polynomials directly, never by inverting a matrix.  Every
routine accepts float nodes, and the coefficient routines also accept exact
rationals (:class:`fractions.Fraction`) so homogeneity identities can be
checked without rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

__all__ = [
    "NodesError",
    "Polynomial",
    "StructuredMatrix",
    "as_nodes",
    "vandermonde",
    "vandermonde_deriv",
    "hermite_stack",
    "lagrange_coeffs",
    "hermite_coeffs",
    "asymptotic_vinv",
    "asymptotic_hinv",
    "hermite_factorial",
    "scaled_hermite",
    "hermite_scaling_factors",
    "antidiagonals",
]

COINCIDENCE_TOL = 1e-12
NEAR_COINCIDENCE_TOL = 1e-6
ILL_CONDITIONED = 1e12


class NodesError(ValueError):
    """Raised when a node set is empty or has coinciding entries."""


def _is_exact(values) -> bool:
    return any(isinstance(v, (Fraction, int)) and not isinstance(v, bool)
               for v in values) and all(
        isinstance(v, (Fraction, int)) for v in values)


def as_nodes(values, *, exact: bool | None = None):
    """Validate a node set and return it as a 1-D array.

    Nodes closer than ``1e-12 * (1 + max|x|)`` are rejected.  Integer or
    :class:`~fractions.Fraction` input is kept exact (object array) unless
    ``exact=False``.
    """
    seq = list(np.atleast_1d(np.asarray(values, dtype=object)).ravel())
    if len(seq) == 0:
        raise NodesError("node set must contain at least one node")
    if exact is None:
        exact = _is_exact(seq)
    if exact:
        arr = np.array([Fraction(v) for v in seq], dtype=object)
        if len(set(arr.tolist())) != len(arr):
            raise NodesError("nodes are not pairwise distinct")
        return arr
    arr = np.asarray([float(v) for v in seq], dtype=float)
    if not np.all(np.isfinite(arr)):
        raise NodesError("nodes must be finite")
    if len(arr) > 1:
        gap = np.min(np.diff(np.sort(arr)))
        if gap < COINCIDENCE_TOL * (1.0 + np.max(np.abs(arr))):
            raise NodesError(f"nodes are not pairwise distinct (gap={gap:.3g})")
    return arr


@dataclass(frozen=True)
class StructuredMatrix:
    """A dense matrix tagged with its structural kind.

    ``warnings`` carries conditioning diagnostics; the matrix is still
    returned when they are present.
    """

    entries: np.ndarray
    kind: str
    order: int | None = None
    cond: float | None = None
    warnings: tuple[str, ...] = field(default_factory=tuple)

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return np.asarray(self.entries)
        return np.asarray(self.entries, dtype=dtype)

    @property
    def shape(self):
        return self.entries.shape

    @property
    def ill_conditioned(self) -> bool:
        return bool(self.warnings)


# --------------------------------------------------------------------------
# polynomials


def _trim(coeffs: list) -> list:
    out = list(coeffs)
    while len(out) > 1 and out[-1] == 0:
        out.pop()
    return out


@dataclass(frozen=True)
class Polynomial:
    """Univariate polynomial in the monomial or factorial basis.

    In the factorial basis, coefficient ``i`` multiplies ``X**i / i!``.
    """

    coeffs: tuple
    basis: str = "monomial"

    def __post_init__(self):
        if self.basis not in ("monomial", "factorial"):
            raise ValueError(f"unknown basis {self.basis!r}")
        object.__setattr__(self, "coeffs", tuple(_trim(list(self.coeffs)) or [0]))

    @property
    def degree(self) -> int:
        if len(self.coeffs) == 1 and self.coeffs[0] == 0:
            return 0
        return len(self.coeffs) - 1

    def to_basis(self, basis: str) -> "Polynomial":
        if basis == self.basis:
            return self
        c = list(self.coeffs)
        if basis == "factorial":
            new = [ci * math.factorial(i) for i, ci in enumerate(c)]
        elif basis == "monomial":
            new = [ci / math.factorial(i) if not isinstance(ci, (int, Fraction))
                   else Fraction(ci) / math.factorial(i)
                   for i, ci in enumerate(c)]
        else:
            raise ValueError(f"unknown basis {basis!r}")
        return Polynomial(tuple(new), basis)

    def monomial_coeffs(self) -> list:
        return list(self.to_basis("monomial").coeffs)

    def __call__(self, x):
        out = 0
        for ci in reversed(self.monomial_coeffs()):
            out = out * x + ci
        return out

    def deriv(self, m: int = 1) -> "Polynomial":
        c = self.monomial_coeffs()
        for _ in range(m):
            c = [i * c[i] for i in range(1, len(c))] or [0]
        return Polynomial(tuple(c), "monomial").to_basis(self.basis)


def _poly_mul(p: list, q: list) -> list:
    out = [0] * (len(p) + len(q) - 1)
    for i, pi in enumerate(p):
        if pi == 0:
            continue
        for j, qj in enumerate(q):
            out[i + j] = out[i + j] + pi * qj
    return out


def _poly_from_roots(roots) -> list:
    c = [1]
    for r in roots:
        c = _poly_mul(c, [-r, 1])
    return c


def _poly_eval(c: list, x):
    out = 0
    for ci in reversed(c):
        out = out * x + ci
    return out


# --------------------------------------------------------------------------
# matrices


def _falling(j: int, l: int) -> int:
    """j (j-1) ... (j-l+1)."""
    out = 1
    for m in range(l):
        out *= j - m
    return out


def vandermonde_deriv(nodes, p: int, l: int = 0) -> StructuredMatrix:
    """l-th derivative of the order-``p`` Vandermonde matrix.

    Entry ``(i, j)`` (0-based) is ``d^l/dx^l x^j`` at ``x_i``.
    """
    if p < 1:
        raise ValueError("order p must be >= 1")
    if l < 0:
        raise ValueError("derivative order l must be >= 0")
    x = as_nodes(nodes)
    exact = x.dtype == object
    rows = []
    for xi in x:
        row = []
        for j in range(p):
            if j < l:
                row.append(Fraction(0) if exact else 0.0)
            else:
                row.append(_falling(j, l) * xi ** (j - l))
        rows.append(row)
    entries = np.array(rows, dtype=object if exact else float)
    kind = "vandermonde" if l == 0 else "vandermonde_deriv"
    return StructuredMatrix(entries, kind, order=l)


def vandermonde(nodes, p: int) -> StructuredMatrix:
    """n x p Vandermonde matrix with entry ``(i, j) = x_i**j`` (0-based)."""
    return vandermonde_deriv(nodes, p, 0)


def hermite_stack(nodes, p: int) -> StructuredMatrix:
    """Stack of the Vandermonde matrix over its first derivative (2n x p)."""
    v = vandermonde_deriv(nodes, p, 0).entries
    dv = vandermonde_deriv(nodes, p, 1).entries
    return StructuredMatrix(np.vstack([v, dv]), "hermite_stack")


def _conditioning(x, inverse_entries) -> tuple[float | None, tuple[str, ...]]:
    if x.dtype == object:
        return None, ()
    msgs = []
    if len(x) > 1:
        gap = np.min(np.diff(np.sort(x)))
        rel = gap / (1.0 + np.max(np.abs(x)))
        if rel < NEAR_COINCIDENCE_TOL:
            msgs.append(f"near-coincident nodes (relative gap {rel:.2e})")
    forward = np.linalg.pinv(inverse_entries.astype(float))
    cond = float(np.linalg.norm(forward, 2) * np.linalg.norm(inverse_entries, 2))
    if not np.isfinite(cond) or cond > ILL_CONDITIONED:
        msgs.append(f"ill-conditioned interpolation matrix (cond ~ {cond:.2e})")
    return cond, tuple(msgs)


def lagrange_polys(nodes) -> list[Polynomial]:
    x = as_nodes(nodes)
    polys = []
    for j, xj in enumerate(x):
        others = [xk for k, xk in enumerate(x) if k != j]
        num = _poly_from_roots(others)
        den = _poly_eval(num, xj)
        polys.append(Polynomial(tuple(c / den for c in num)))
    return polys


def lagrange_coeffs(nodes) -> StructuredMatrix:
    """Monomial coefficients of the Lagrange polynomials.

    Column ``j`` holds the coefficients of ``l_j``, so the result is the
    inverse of ``vandermonde(nodes, n)``.
    """
    x = as_nodes(nodes)
    n = len(x)
    exact = x.dtype == object
    cols = [lagrange_polys(x)[j].monomial_coeffs() for j in range(n)]
    zero = Fraction(0) if exact else 0.0
    entries = np.array([[cols[j][i] if i < len(cols[j]) else zero
                         for j in range(n)] for i in range(n)],
                       dtype=object if exact else float)
    cond, msgs = _conditioning(x, entries)
    return StructuredMatrix(entries, "lagrange", cond=cond, warnings=msgs)


def hermite_polys(nodes) -> tuple[list[Polynomial], list[Polynomial]]:
    """The Hermite basis polynomials ``(mu_j)`` and ``(nu_j)``."""
    x = as_nodes(nodes)
    mus, nus = [], []
    for j, (xj, lj) in enumerate(zip(x, lagrange_polys(x))):
        lc = lj.monomial_coeffs()
        lsq = _poly_mul(lc, lc)
        dl = sum((1 / (xj - xk) if x.dtype != object else Fraction(1) / (xj - xk))
                 for k, xk in enumerate(x) if k != j)
        # 1 - 2 (X - xj) l_j'(xj)
        lin = [1 + 2 * xj * dl, -2 * dl]
        mus.append(Polynomial(tuple(_poly_mul(lin, lsq))))
        nus.append(Polynomial(tuple(_poly_mul([-xj, 1], lsq))))
    return mus, nus


def hermite_coeffs(nodes) -> tuple[StructuredMatrix, StructuredMatrix]:
    """Coefficients of the Hermite basis polynomials.

    Returns ``(mu, nu)``, each ``2n x n``; ``hstack([mu, nu])`` is the inverse
    of ``hermite_stack(nodes, 2n)``.
    """
    x = as_nodes(nodes)
    n = len(x)
    exact = x.dtype == object
    zero = Fraction(0) if exact else 0.0
    mus, nus = hermite_polys(x)

    def _mat(polys):
        cols = [p.monomial_coeffs() for p in polys]
        return np.array([[cols[j][i] if i < len(cols[j]) else zero
                          for j in range(n)] for i in range(2 * n)],
                        dtype=object if exact else float)

    mu, nu = _mat(mus), _mat(nus)
    cond, msgs = _conditioning(x, np.hstack([mu, nu]))
    return (StructuredMatrix(mu, "hermite_mu", cond=cond, warnings=msgs),
            StructuredMatrix(nu, "hermite_nu", cond=cond, warnings=msgs))


def asymptotic_vinv(nodes) -> np.ndarray:
    """Leading term of ``t**(n-1) * inv(V_n^{t x})`` as ``t -> 0``.

    Only the last row is nonzero; it holds the leading Lagrange coefficients
    ``1 / prod_{k != j} (x_j - x_k)``.
    """
    L = lagrange_coeffs(nodes).entries
    out = np.zeros_like(L)
    out[-1] = L[-1]
    return out


def asymptotic_hinv(nodes) -> np.ndarray:
    """Leading term of ``t**(2n-1) * inv(H_{2n}^{t x})`` as ``t -> 0``."""
    mu, _ = hermite_coeffs(nodes)
    n = mu.shape[1]
    out = np.zeros((2 * n, 2 * n), dtype=mu.entries.dtype)
    if out.dtype == object:
        out[:] = Fraction(0)
    out[-1, :n] = mu.entries[-1]
    return out


# --------------------------------------------------------------------------
# factorial-basis Hermite matrix


def hermite_factorial(z) -> np.ndarray:
    """Hermite matrix in the factorial basis for nodes ``z`` (2N x 2N).

    Row ``r`` evaluates ``X**r / r!`` at the nodes (first N columns) and its
    derivative ``X**(r-1) / (r-1)!`` (last N columns).
    """
    z = np.asarray(z, dtype=float)
    n = len(z)
    H = np.zeros((2 * n, 2 * n))
    for r in range(2 * n):
        H[r, :n] = z ** r / math.factorial(r)
        if r >= 1:
            H[r, n:] = z ** (r - 1) / math.factorial(r - 1)
    return H


def hermite_scaling_factors(t: float, N: int) -> tuple[np.ndarray, np.ndarray]:
    """Diagonals ``(left, right)`` with ``H_{tz} = diag(left) H_z diag(right)``."""
    left = t ** np.arange(2 * N, dtype=float)
    right = np.concatenate([np.ones(N), np.full(N, 1.0 / t)])
    return left, right


def scaled_hermite(nodes, t: float, N: int | None = None) -> StructuredMatrix:
    """Factorial-basis Hermite matrix ``H_{tz}`` at the scaled nodes ``t z``."""
    z = as_nodes(nodes, exact=False)
    if N is not None and N != len(z):
        raise ValueError(f"expected {N} nodes, got {len(z)}")
    if t <= 0:
        raise ValueError("scale t must be positive")
    return StructuredMatrix(hermite_factorial(t * z), "scaled_hermite")


def antidiagonals(A) -> list[np.ndarray]:
    """Anti-diagonals ``d_1 .. d_{2n-1}`` of a square matrix.

    ``d_i`` collects ``a[k, j]`` with ``k + j = i + 1`` (1-based), ordered by
    increasing row; it has ``min(i, 2n - i)`` entries.
    """
    A = np.asarray(A)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("matrix must be square")
    out = []
    for s in range(2 * n - 1):  # s = k + j, 0-based
        ks = range(max(0, s - n + 1), min(s, n - 1) + 1)
        out.append(np.array([A[k, s - k] for k in ks]))
    return out
