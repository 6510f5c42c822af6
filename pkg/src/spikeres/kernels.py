"""Measurement kernels and their correlation calculus.

A kernel maps a position ``x`` to an element ``phi(x)`` of a Hilbert space.
All computations go through the correlation ``K(x, y) = <phi(x), phi(y)>``
and its partial derivatives; for translation-invariant kernels
``K(x, y) = g(x - y)`` so that

    d^a/dx^a d^b/dy^b K(x, y) = (-1)**b * g^(a+b)(x - y).

Measurement-space elements are stored as :class:`AtomCombo` objects, finite
sums ``sum_j c_j phi^(d_j)(x_j)``, and are never sampled as functions.
Trigonometric kernels additionally expose explicit real coordinates
(real and imaginary parts of the Fourier coefficients).
"""

from __future__ import annotations

import json
import math
import re
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.interpolate import BSpline

__all__ = [
    "DerivativeOrderError",
    "Kernel",
    "TrigKernel",
    "DirichletKernel",
    "FourierKernel",
    "GaussianKernel",
    "parse_kernel",
    "shipped_profiles",
    "AtomCombo",
    "Element",
    "GramBundle",
    "InjectivityReport",
    "correlation_deriv",
    "gram_Fk",
    "gamma_gram",
    "gram_matrix",
    "injectivity_check",
    "factorization_residual",
    "hermite_he",
    "divided_difference_combo",
    "DEFAULT_MAX_DERIV",
]

DEFAULT_MAX_DERIV = 12


class DerivativeOrderError(ValueError):
    """Requested derivative order exceeds the kernel's declared smoothness."""


def default_max_deriv(N: int | None) -> int:
    return DEFAULT_MAX_DERIV if N is None else 2 * int(N) + 2


def hermite_he(n: int, u):
    """Probabilists' Hermite polynomial ``He_n`` by the three-term recurrence."""
    u = np.asarray(u, dtype=float)
    h0 = np.ones_like(u)
    if n == 0:
        return h0
    h1 = u.copy()
    for k in range(n - 1):
        h0, h1 = h1, u * h1 - (k + 1) * h0
    return h1


class Kernel(ABC):
    """Translation-invariant measurement kernel.

    Subclasses provide the derivatives of the correlation profile
    ``g(u) = <phi(x + u), phi(x)>`` and a spectral measure.
    """

    kind: str
    domain: str
    max_deriv: int

    @abstractmethod
    def profile_deriv(self, n: int, u) -> np.ndarray:
        """n-th derivative of the correlation profile ``g`` at ``u``."""

    @abstractmethod
    def spectral_measure(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Frequencies and nonnegative weights ``|phi_hat|**2`` (possibly a
        quadrature of a continuous spectrum) resolving polynomials of degree
        ``k``."""

    @abstractmethod
    def spec(self) -> str:
        """Config-string form, accepted by :func:`parse_kernel`."""

    @property
    @abstractmethod
    def bandwidth(self) -> float:
        """Angular frequency above which the spectrum is negligible."""

    def with_max_deriv(self, max_deriv: int) -> "Kernel":
        raise NotImplementedError

    def check_order(self, total: int) -> None:
        if total > 2 * self.max_deriv:
            raise DerivativeOrderError(
                f"correlation order {total} exceeds 2*max_deriv={2 * self.max_deriv}")

    def corr(self, a: int, b: int, x, y) -> np.ndarray:
        """``<phi^(a)(x), phi^(b)(y)>``, broadcasting over ``x`` and ``y``."""
        if a < 0 or b < 0:
            raise ValueError("derivative orders must be nonnegative")
        self.check_order(a + b)
        u = np.subtract(np.asarray(x, float), np.asarray(y, float))
        val = self.profile_deriv(a + b, u)
        return -val if b % 2 else val

    def to_dict(self) -> dict:
        return {"spec": self.spec(), "max_deriv": self.max_deriv}

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.spec()!r}, max_deriv={self.max_deriv})"


class TrigKernel(Kernel):
    """Trigonometric-polynomial kernel on the torus ``[0, 1)``.

    ``phi(x)`` has Fourier coefficients ``c_k exp(-2 i pi k x)`` for
    ``|k| <= fc``; ``coeffs`` are the magnitudes ``c_{-fc} .. c_{fc}``.
    """

    domain = "torus"

    def __init__(self, coeffs: Sequence[float], max_deriv: int = DEFAULT_MAX_DERIV):
        c = np.asarray(coeffs, dtype=float).ravel()
        if c.size % 2 != 1:
            raise ValueError("need 2*fc+1 Fourier magnitudes (indices -fc..fc)")
        if np.any(c < 0) or not np.all(np.isfinite(c)):
            raise ValueError("Fourier magnitudes must be finite and nonnegative")
        self.coeffs = c
        self.fc = (c.size - 1) // 2
        self.freqs = np.arange(-self.fc, self.fc + 1)
        self.max_deriv = int(max_deriv)
        self._w = c ** 2
        self._omega = 2 * np.pi * self.freqs

    kind = "fourier"

    @property
    def bandwidth(self) -> float:
        return 2 * np.pi * max(self.fc, 1)

    @property
    def dim(self) -> int:
        """Real dimension of the explicit coordinate space."""
        return 2 * self.coeffs.size

    def profile_deriv(self, n: int, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        phase = np.multiply.outer(u, self._omega) + n * np.pi / 2
        return np.cos(phase) @ (self._w * self._omega ** n)

    def spectral_measure(self, k: int):
        keep = self._w > 0
        return self._omega[keep], self._w[keep]

    def coordinates(self, x, d: int = 0) -> np.ndarray:
        """Real coordinates of ``phi^(d)(x)``, shape ``x.shape + (dim,)``."""
        x = np.asarray(x, dtype=float)
        z = self.coeffs * (-2j * np.pi * self.freqs) ** d * np.exp(
            -2j * np.pi * np.multiply.outer(x, self.freqs))
        return np.concatenate([z.real, z.imag], axis=-1)

    def with_max_deriv(self, max_deriv: int) -> "TrigKernel":
        return type(self)._rebuild(self, max_deriv)

    @staticmethod
    def _rebuild(k: "TrigKernel", max_deriv: int):
        return TrigKernel(k.coeffs, max_deriv)

    def spec(self) -> str:
        return "fourier:coeffs=" + json.dumps([float(v) for v in self.coeffs])


class FourierKernel(TrigKernel):
    """Trigonometric kernel with a user-supplied magnitude profile."""

    @staticmethod
    def _rebuild(k, max_deriv):
        return FourierKernel(k.coeffs, max_deriv)


class DirichletKernel(TrigKernel):
    """Ideal low-pass filter with cutoff ``fc`` (all magnitudes equal to one)."""

    kind = "dirichlet"

    def __init__(self, fc: int, max_deriv: int = DEFAULT_MAX_DERIV):
        if int(fc) != fc or fc < 1:
            raise ValueError("fc must be a positive integer")
        super().__init__(np.ones(2 * int(fc) + 1), max_deriv)

    @staticmethod
    def _rebuild(k, max_deriv):
        return DirichletKernel(k.fc, max_deriv)

    def spec(self) -> str:
        return f"dirichlet:fc={self.fc}"


class GaussianKernel(Kernel):
    """Gaussian filter ``exp(-x**2 / (2 sigma**2))`` on the real line.

    Its correlation profile is ``g(u) = sigma sqrt(pi) exp(-u**2/(4 sigma**2))``.
    """

    kind = "gaussian"
    domain = "line"

    def __init__(self, sigma: float = 1.0, max_deriv: int = DEFAULT_MAX_DERIV):
        if not sigma > 0:
            raise ValueError("sigma must be positive")
        self.sigma = float(sigma)
        self.max_deriv = int(max_deriv)

    @property
    def bandwidth(self) -> float:
        return 6.0 / self.sigma

    def profile_deriv(self, n: int, u) -> np.ndarray:
        s = math.sqrt(2.0) * self.sigma
        v = np.asarray(u, dtype=float) / s
        return (self.sigma * math.sqrt(math.pi) * (-1) ** n * s ** (-n)
                * hermite_he(n, v) * np.exp(-0.5 * v * v))

    def profile_envelope(self, n: int, u) -> np.ndarray:
        """Upper bound of ``|g^(n)(u)|`` that decreases in ``|u|`` once
        ``|u| >= sqrt(2 n) sigma``."""
        s = math.sqrt(2.0) * self.sigma
        v = np.abs(np.asarray(u, dtype=float)) / s
        a = np.abs(np.polynomial.hermite_e.herme2poly([0] * n + [1]))
        return (self.sigma * math.sqrt(math.pi) * s ** (-n)
                * np.polynomial.polynomial.polyval(v, a) * np.exp(-0.5 * v * v))

    def spectral_measure(self, k: int):
        # |phi_hat(w)|^2 is proportional to exp(-sigma^2 w^2)
        nodes, weights = np.polynomial.hermite.hermgauss(max(2 * k + 4, 40))
        return nodes / self.sigma, weights

    def with_max_deriv(self, max_deriv: int) -> "GaussianKernel":
        return GaussianKernel(self.sigma, max_deriv)

    def spec(self) -> str:
        return f"gaussian:sigma={self.sigma!r}"


_SPEC_RE = re.compile(r"^\s*(\w+)\s*(?::(.*))?$", re.S)


def parse_kernel(spec: str, *, N: int | None = None,
                 max_deriv: int | None = None) -> Kernel:
    """Build a kernel from ``dirichlet:fc=10``, ``gaussian:sigma=1.0``,
    ``fourier:coeffs=[...]`` or ``fourier:profile=NAME`` (a bundled profile).

    ``max_deriv`` defaults to ``2N + 2`` when a spike count is given.
    """
    if max_deriv is None:
        max_deriv = default_max_deriv(N)
    m = _SPEC_RE.match(spec or "")
    if not m:
        raise ValueError(f"cannot parse kernel spec {spec!r}")
    name, rest = m.group(1).lower(), (m.group(2) or "").strip()
    params = {}
    if rest:
        # split on commas that are not inside brackets
        depth, start = 0, 0
        parts = []
        for i, ch in enumerate(rest):
            if ch == "[":
                depth += 1
            elif ch == "]":
                depth -= 1
            elif ch == "," and depth == 0:
                parts.append(rest[start:i])
                start = i + 1
        parts.append(rest[start:])
        for part in parts:
            if "=" not in part:
                raise ValueError(f"kernel parameter {part!r} is not key=value")
            key, val = part.split("=", 1)
            params[key.strip()] = val.strip()
    try:
        if name == "dirichlet":
            fc = float(params.pop("fc"))
            if fc != int(fc):
                raise ValueError("fc must be an integer")
            kern = DirichletKernel(int(fc), max_deriv)
        elif name == "gaussian":
            kern = GaussianKernel(float(params.pop("sigma", "1.0")), max_deriv)
        elif name == "fourier":
            if "profile" in params:
                prof = params.pop("profile")
                table = shipped_profiles()
                if prof not in table:
                    raise ValueError(f"unknown profile {prof!r}; shipped: {sorted(table)}")
                coeffs = table[prof]["coeffs"]
            else:
                coeffs = json.loads(params.pop("coeffs"))
            kern = FourierKernel(coeffs, max_deriv)
        else:
            raise ValueError(f"unknown kernel kind {name!r}")
    except KeyError as exc:
        raise ValueError(f"kernel {name!r} is missing parameter {exc.args[0]}") from None
    except json.JSONDecodeError as exc:
        raise ValueError(f"bad coefficient list: {exc}") from None
    if params:
        raise ValueError(f"unknown kernel parameters {sorted(params)}")
    return kern


def shipped_profiles() -> dict[str, dict]:
    """Bundled Fourier magnitude profiles, keyed by name.

    Each entry has ``coeffs`` (indices ``-fc..fc``) and the spike count
    ``N`` it is meant to be examined with.
    """
    from importlib import resources
    data = json.loads(resources.files("spikeres.data")
                      .joinpath("fourier_profiles.json").read_text())
    return {p["name"]: {"coeffs": p["coeffs"], "N": int(p["N"])} for p in data["profiles"]}


def correlation_deriv(kernel: Kernel, a: int, b: int, x: float, y: float) -> float:
    """Scalar ``<phi^(a)(x), phi^(b)(y)>``."""
    return float(kernel.corr(a, b, x, y))


# --------------------------------------------------------------------------
# atom combinations


@dataclass(frozen=True)
class AtomCombo:
    """Finite combination ``sum_j c_j phi^(d_j)(x_j)``."""

    positions: np.ndarray
    orders: np.ndarray
    coeffs: np.ndarray

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.positions, dtype=float)).ravel()
        d = np.atleast_1d(np.asarray(self.orders, dtype=int)).ravel()
        c = np.atleast_1d(np.asarray(self.coeffs, dtype=float)).ravel()
        if not (x.size == d.size == c.size):
            raise ValueError("positions, orders and coeffs must have equal length")
        if np.any(d < 0):
            raise ValueError("derivative orders must be nonnegative")
        object.__setattr__(self, "positions", x)
        object.__setattr__(self, "orders", d)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def empty(cls) -> "AtomCombo":
        return cls(np.zeros(0), np.zeros(0, int), np.zeros(0))

    @classmethod
    def atoms(cls, atoms: Iterable[tuple[float, int, float]]) -> "AtomCombo":
        atoms = list(atoms)
        if not atoms:
            return cls.empty()
        x, d, c = zip(*atoms)
        return cls(np.array(x), np.array(d), np.array(c))

    @classmethod
    def spikes(cls, amplitudes, positions) -> "AtomCombo":
        """``Phi m`` for ``m = sum a_i delta_{x_i}``."""
        a = np.atleast_1d(np.asarray(amplitudes, float))
        return cls(np.asarray(positions, float), np.zeros(a.size, int), a)

    def __len__(self) -> int:
        return self.coeffs.size

    def __add__(self, other: "AtomCombo") -> "AtomCombo":
        return AtomCombo(np.concatenate([self.positions, other.positions]),
                         np.concatenate([self.orders, other.orders]),
                         np.concatenate([self.coeffs, other.coeffs]))

    def __neg__(self) -> "AtomCombo":
        return AtomCombo(self.positions, self.orders, -self.coeffs)

    def __sub__(self, other: "AtomCombo") -> "AtomCombo":
        return self + (-other)

    def scaled(self, s: float) -> "AtomCombo":
        return AtomCombo(self.positions, self.orders, s * self.coeffs)

    def __mul__(self, s: float) -> "AtomCombo":
        return self.scaled(float(s))

    __rmul__ = __mul__

    def simplified(self, tol: float = 0.0) -> "AtomCombo":
        """Merge atoms sharing (position, order) and drop |c| <= tol."""
        acc: dict[tuple[float, int], float] = {}
        for x, d, c in zip(self.positions, self.orders, self.coeffs):
            acc[(float(x), int(d))] = acc.get((float(x), int(d)), 0.0) + float(c)
        return AtomCombo.atoms((x, d, c) for (x, d), c in acc.items() if abs(c) > tol)

    def correlate(self, kernel: Kernel, x, d: int = 0) -> np.ndarray:
        """``<phi^(d)(x), p>`` for every entry of ``x``."""
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape)
        for order in np.unique(self.orders):
            sel = self.orders == order
            K = kernel.corr(int(order), d, self.positions[sel][:, None],
                            x.reshape(1, -1))
            out += (self.coeffs[sel] @ K).reshape(x.shape)
        return out

    def inner(self, kernel: Kernel, other: "AtomCombo") -> float:
        total = 0.0
        for order in np.unique(other.orders):
            sel = other.orders == order
            vals = self.correlate(kernel, other.positions[sel], int(order))
            total += float(vals @ other.coeffs[sel])
        return total

    def norm2(self, kernel: Kernel) -> float:
        return self.inner(kernel, self)

    def coordinates(self, kernel: Kernel) -> np.ndarray:
        """Explicit coordinate vector (trigonometric kernels only)."""
        if not isinstance(kernel, TrigKernel):
            raise TypeError("explicit coordinates exist only for trigonometric kernels")
        out = np.zeros(kernel.dim)
        for order in np.unique(self.orders):
            sel = self.orders == order
            out += self.coeffs[sel] @ kernel.coordinates(self.positions[sel], int(order))
        return out

    def to_dict(self) -> dict:
        return {"positions": self.positions.tolist(),
                "orders": self.orders.tolist(),
                "coeffs": self.coeffs.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "AtomCombo":
        return cls(np.array(d["positions"], float), np.array(d["orders"], int),
                   np.array(d["coeffs"], float))


@dataclass(frozen=True)
class Element:
    """Measurement-space element: an atom combination plus, for
    trigonometric kernels, an optional explicit coordinate vector.

    The explicit part carries data (such as sampled noise) that is not
    generated by atoms.
    """

    combo: AtomCombo
    extra: np.ndarray | None = None

    @classmethod
    def of(cls, obj) -> "Element":
        return obj if isinstance(obj, Element) else cls(obj)

    def _extra_for(self, kernel):
        if self.extra is not None and not isinstance(kernel, TrigKernel):
            raise TypeError("explicit coordinates need a trigonometric kernel")
        return self.extra

    def correlate(self, kernel: Kernel, x, d: int = 0) -> np.ndarray:
        out = self.combo.correlate(kernel, x, d)
        ex = self._extra_for(kernel)
        if ex is not None:
            out = out + kernel.coordinates(np.asarray(x, float), d) @ ex
        return out

    def inner(self, kernel: Kernel, other) -> float:
        other = Element.of(other)
        total = self.combo.inner(kernel, other.combo)
        if other.extra is not None:
            total += float(self.combo.coordinates(kernel) @ other.extra)
        ex = self._extra_for(kernel)
        if ex is not None:
            total += float(ex @ other.coordinates(kernel))
        return total

    def norm2(self, kernel: Kernel) -> float:
        return self.inner(kernel, self)

    def coordinates(self, kernel: Kernel) -> np.ndarray:
        out = self.combo.coordinates(kernel)
        if self.extra is not None:
            out = out + self.extra
        return out

    def __add__(self, other) -> "Element":
        other = Element.of(other)
        if self.extra is None:
            extra = other.extra
        elif other.extra is None:
            extra = self.extra
        else:
            extra = self.extra + other.extra
        return Element(self.combo + other.combo, extra)

    def __neg__(self) -> "Element":
        return self.scaled(-1.0)

    def __sub__(self, other) -> "Element":
        return self + (-Element.of(other))

    def scaled(self, s: float) -> "Element":
        return Element(self.combo.scaled(s),
                       None if self.extra is None else s * self.extra)

    def to_dict(self) -> dict:
        d = {"atoms": self.combo.to_dict()}
        if self.extra is not None:
            d["extra"] = self.extra.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Element":
        extra = d.get("extra")
        return cls(AtomCombo.from_dict(d["atoms"]),
                   None if extra is None else np.asarray(extra, float))


# --------------------------------------------------------------------------
# Gram matrices


@dataclass(frozen=True)
class GramBundle:
    matrix: np.ndarray
    basis_labels: list[str]
    cond_estimate: float
    warnings: tuple[str, ...] = field(default_factory=tuple)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.matrix, dtype=dtype)


def _cond(G: np.ndarray) -> float:
    ev = np.linalg.eigvalsh(G)
    top = float(np.max(np.abs(ev)))
    low = float(np.min(ev))
    if low <= 0:
        return math.inf
    return top / low


def gram_matrix(kernel: Kernel, positions, orders) -> np.ndarray:
    """Gram of ``phi^(d_j)(x_j)``."""
    x = np.asarray(positions, float)
    d = np.asarray(orders, int)
    G = np.empty((x.size, x.size))
    for i in range(x.size):
        for j in range(x.size):
            G[i, j] = kernel.corr(int(d[i]), int(d[j]), x[i], x[j])
    return G


def gram_Fk(kernel: Kernel, k: int) -> GramBundle:
    """Gram of ``(phi(0), phi'(0), ..., phi^(k)(0))`` with unweighted derivatives."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    if k > kernel.max_deriv:
        raise DerivativeOrderError(f"k={k} exceeds max_deriv={kernel.max_deriv}")
    g = [float(kernel.profile_deriv(n, 0.0)) for n in range(2 * k + 1)]
    G = np.array([[(-1) ** j * g[i + j] for j in range(k + 1)] for i in range(k + 1)])
    labels = [f"phi^({m})(0)" for m in range(k + 1)]
    return GramBundle(G, labels, _cond(G))


def gamma_gram(kernel: Kernel, positions) -> GramBundle:
    """Gram of ``(phi(x_1) .. phi(x_n), phi'(x_1) .. phi'(x_n))``."""
    x = np.atleast_1d(np.asarray(positions, float))
    n = x.size
    if isinstance(kernel, TrigKernel) and 2 * n > np.count_nonzero(kernel.coeffs):
        msgs = ("more atoms than nonzero Fourier coefficients; Gram is singular",)
    else:
        msgs = ()
    X, Y = x[:, None], x[None, :]
    G = np.block([[kernel.corr(0, 0, X, Y), kernel.corr(0, 1, X, Y)],
                  [kernel.corr(1, 0, X, Y), kernel.corr(1, 1, X, Y)]])
    G = 0.5 * (G + G.T)
    labels = [f"phi({v:g})" for v in x] + [f"phi'({v:g})" for v in x]
    cond = _cond(G)
    if not np.isfinite(cond) or cond > 1e14:
        msgs = msgs + (f"Gram is numerically rank deficient (cond ~ {cond:.2e})",)
    return GramBundle(G, labels, cond, msgs)


# --------------------------------------------------------------------------
# injectivity


@dataclass(frozen=True)
class InjectivityReport:
    """Whether ``phi(0), ..., phi^(k)(0)`` are linearly independent.

    ``krylov_residuals`` are the normalized recurrence coefficients of the
    orthogonal polynomials of the spectral measure; independence of degree
    ``k`` requires the first ``k`` to be nonzero.  ``gram_eig_ratio`` is the
    smallest-to-largest eigenvalue ratio of the diagonally equilibrated Gram,
    kept as a diagnostic.
    """

    holds: bool
    k: int
    krylov_residuals: tuple[float, ...]
    min_residual: float
    gram_eig_ratio: float
    tol: float

    def __bool__(self) -> bool:
        return self.holds


def _lanczos_residuals(freqs: np.ndarray, weights: np.ndarray, steps: int) -> list[float]:
    scale = float(np.max(np.abs(freqs))) or 1.0
    a = freqs / scale
    q = np.sqrt(weights)
    q = q / np.linalg.norm(q)
    Q = [q]
    betas = []
    for _ in range(steps):
        v = a * Q[-1]
        for _ in range(2):
            for u in Q:
                v = v - (u @ v) * u
        beta = float(np.linalg.norm(v))
        betas.append(beta)
        if beta < 1e-13:
            break
        Q.append(v / beta)
    return betas


def injectivity_check(kernel: Kernel, k: int, tol: float = 1e-8) -> InjectivityReport:
    """Test linear independence of the first ``k + 1`` derivative atoms.

    ``phi^(j)(0)`` has spectrum ``(i w)**j phi_hat(w)``, so independence is
    equivalent to the monomials ``1, w, ..., w**k`` being independent in
    ``L2(|phi_hat|**2)``.  That is decided by running the Lanczos recurrence
    of the spectral measure, which avoids the factorial growth of the raw
    Gram entries.
    """
    if k < 0:
        raise ValueError("k must be nonnegative")
    freqs, weights = kernel.spectral_measure(k)
    keep = weights > 0
    freqs, weights = freqs[keep], weights[keep]
    if freqs.size == 0:
        return InjectivityReport(False, k, (), 0.0, 0.0, tol)
    betas = _lanczos_residuals(freqs, weights, k)
    betas = betas + [0.0] * (k - len(betas))
    holds = all(b > tol for b in betas[:k])
    try:
        G = gram_Fk(kernel, min(k, kernel.max_deriv)).matrix
        diag = np.diag(G)
        if np.any(diag <= 0):
            ratio = 0.0  # a derivative atom is the zero element
        else:
            dg = 1.0 / np.sqrt(diag)
            ev = np.linalg.eigvalsh(G * np.outer(dg, dg))
            ratio = float(ev[0] / ev[-1])
    except (DerivativeOrderError, FloatingPointError):
        ratio = float("nan")
    return InjectivityReport(holds, k, tuple(betas[:k]),
                             float(min(betas[:k])) if k else 1.0, ratio, tol)


# --------------------------------------------------------------------------
# Taylor factorization


def hermite_factorial_matrix(z, t: float) -> np.ndarray:
    from .interp import hermite_factorial
    return hermite_factorial(t * np.asarray(z, float))


def factorization_residual(kernel: Kernel, t: float, z) -> float:
    """Spectral norm of ``Gamma_{tz} - F_{2N} H_{tz}`` in explicit coordinates.

    ``F_{2N}`` stacks ``phi^(r)(0)`` for ``r < 2N`` and ``H_{tz}`` is the
    factorial-basis Hermite matrix, so the difference is the Taylor remainder
    of the atoms ``phi(t z_i), phi'(t z_i)`` around 0.
    """
    if not isinstance(kernel, TrigKernel):
        raise TypeError("factorization_residual needs explicit coordinates "
                        "(trigonometric kernel)")
    z = np.atleast_1d(np.asarray(z, float))
    N = z.size
    if 2 * N > kernel.coeffs.size:
        raise ValueError("2N must not exceed 2fc+1")
    x = t * z
    Gam = np.hstack([kernel.coordinates(x, 0).T, kernel.coordinates(x, 1).T])
    F = np.stack([kernel.coordinates(0.0, r) for r in range(2 * N)], axis=1)
    H = hermite_factorial_matrix(z, t)
    return float(np.linalg.norm(Gam - F @ H, 2))


# --------------------------------------------------------------------------
# divided differences


def _gauss_points(a: float, b: float, m: int) -> tuple[np.ndarray, np.ndarray]:
    u, w = np.polynomial.legendre.leggauss(m)
    return 0.5 * (b - a) * u + 0.5 * (a + b), 0.5 * (b - a) * w


def divided_difference_combo(kernel: Kernel, knots: Sequence[float]) -> AtomCombo:
    """The divided difference ``phi[xi_0, ..., xi_k]`` as an atom combination.

    Repeated knots are allowed.  The Peano representation
    ``f[xi_0..xi_k] = (1/k!) int f^(k)(u) M(u) du`` with ``M`` the normalized
    B-spline on the knots is discretized by Gauss-Legendre on every interval
    between consecutive distinct knots.  The result stays well scaled when
    the knots cluster, unlike the combination of point atoms.
    """
    xi = np.sort(np.asarray(knots, float))
    k = xi.size - 1
    if k < 0:
        raise ValueError("need at least one knot")
    span = xi[-1] - xi[0]
    if k == 0:
        return AtomCombo([xi[0]], [0], [1.0])
    if span <= 1e-14 * (1.0 + abs(xi[0])):
        return AtomCombo([xi[0]], [k], [1.0 / math.factorial(k)])
    breaks = np.unique(xi)
    B = BSpline.basis_element(xi, extrapolate=False)
    m = k // 2 + 6 + int(math.ceil(kernel.bandwidth * span / max(len(breaks) - 1, 1)))
    pts, wts = [], []
    for lo, hi in zip(breaks[:-1], breaks[1:]):
        u, w = _gauss_points(lo, hi, m)
        pts.append(u)
        wts.append(w)
    u = np.concatenate(pts)
    w = np.concatenate(wts)
    M = np.nan_to_num(B(u)) * k / span
    return AtomCombo(u, np.full(u.size, k), w * M / math.factorial(k))
