"""Dual precertificates for a cluster of positive spikes.

* :func:`vanishing_precert` builds the minimal-norm element whose
  correlation equals 1 with zero slope at every spike of the cluster ``t z``.
* :func:`limit_precert` builds its ``t -> 0`` limit: value 1 at the origin
  and ``2N - 1`` vanishing derivatives.
* :func:`check_nondegeneracy` turns a certificate into a verdict on a grid.

Every evaluation reduces to kernel correlations, so no quadrature of the
measurement space is involved.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Sequence

import numpy as np
import scipy.linalg as sla

from .interp import as_nodes
from .kernels import (AtomCombo, Element, GaussianKernel, Kernel, TrigKernel,
                      divided_difference_combo, gram_Fk, injectivity_check,
                      parse_kernel)
from .structmat import PreconditionError

__all__ = [
    "Certificate",
    "NondegeneracyReport",
    "NecessaryReport",
    "ConvergenceReport",
    "GridSpec",
    "GridError",
    "vanishing_precert",
    "limit_precert",
    "gaussian_etaW_closed_form",
    "etaW_curvature",
    "gaussian_curvature_closed_form",
    "hermite_at_zero",
    "hermite_at_zero_closed_form",
    "check_nondegeneracy",
    "necessary_condition_check",
    "convergence_report",
    "second_deriv_asymptotics",
    "lambda_certificate",
    "default_grid",
]

MARGIN = 1e-6


class GridError(ValueError):
    """Grid too coarse for the kernel bandwidth."""


@dataclass(frozen=True)
class Certificate:
    """A dual element ``p`` together with ``eta(x) = <phi(x), p>``.

    ``source`` is anything exposing ``correlate(kernel, x, d)``.  ``meta``
    records how it was built (``{"type": "vanishing", "t": .., "z": ..}``,
    ``{"type": "limit", "N": ..}`` or ``{"type": "lambda", ...}``).
    ``nominal`` optionally holds the representation over the spike atoms
    ``phi(x_i), phi'(x_i)``; it is informative only, since at small scale its
    coefficients are huge and cancel.
    """

    source: Any
    kernel: Kernel
    meta: dict
    nominal: AtomCombo | None = None
    cond_estimate: float = float("nan")

    def eval(self, x, d: int = 0) -> np.ndarray:
        return self.source.correlate(self.kernel, x, d)

    def __call__(self, x, d: int = 0):
        return self.eval(x, d)

    @property
    def spikes(self) -> np.ndarray:
        kind = self.meta.get("type")
        if kind == "vanishing":
            return self.meta["t"] * np.asarray(self.meta["z"], float)
        if kind == "limit":
            return np.zeros(1)
        return np.asarray(self.meta.get("positions", []), float)

    def to_json(self) -> str:
        src = self.source
        if isinstance(src, AtomCombo):
            src_d = {"atoms": src.to_dict()}
        else:
            src_d = src.to_dict()
        d = {"kernel": self.kernel.to_dict(), "meta": self.meta, "source": src_d}
        if self.nominal is not None:
            d["nominal"] = self.nominal.to_dict()
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Certificate":
        d = json.loads(text)
        kern = parse_kernel(d["kernel"]["spec"], max_deriv=d["kernel"]["max_deriv"])
        nominal = AtomCombo.from_dict(d["nominal"]) if "nominal" in d else None
        return cls(Element.from_dict(d["source"]), kern, d["meta"], nominal)


# --------------------------------------------------------------------------
# construction


def _spd_solve(G: np.ndarray, rhs: np.ndarray, what: str) -> tuple[np.ndarray, float]:
    """Solve ``G b = rhs`` for SPD ``G`` after Jacobi equilibration."""
    dg = np.sqrt(np.abs(np.diag(G)))
    if np.any(dg == 0):
        raise PreconditionError("injectivity", f"{what}: zero atom in Gram")
    S = G / np.outer(dg, dg)
    ev = np.linalg.eigvalsh(S)
    cond = float(ev[-1] / ev[0]) if ev[0] > 0 else math.inf
    try:
        cf = sla.cho_factor(S)
    except np.linalg.LinAlgError:
        raise PreconditionError(
            "injectivity", f"{what}: Gram is not positive definite (cond ~ {cond:.2e})"
        ) from None
    if not np.isfinite(cond) or cond > 1e15:
        raise PreconditionError(
            "injectivity", f"{what}: Gram is numerically singular (cond ~ {cond:.2e})")
    return sla.cho_solve(cf, rhs / dg) / dg, cond


def _confluent_knots(x: np.ndarray) -> np.ndarray:
    return np.repeat(np.sort(x), 2)


def _newton_to_hermite(x: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Weights on ``(phi(x_i), phi'(x_i))`` of ``sum_k b_k phi[xi_0..xi_k]``."""
    xs = np.sort(x)
    xi = _confluent_knots(xs)
    n = xs.size
    T = np.zeros((2 * n, 2 * n))
    for k in range(2 * n):
        roots = xi[:k]
        poly = np.poly1d(roots, r=True) if k else np.poly1d([1.0])
        T[k, :n] = poly(xs)
        T[k, n:] = poly.deriv()(xs) if k else 0.0
    c = np.linalg.solve(T, b)
    order = np.argsort(np.argsort(x))
    return np.concatenate([c[:n][order], c[n:][order]])


def vanishing_precert(kernel: Kernel, t: float, z) -> Certificate:
    """Minimal-norm precertificate interpolating 1 with zero slope at ``t z``.

    The dual element lies in the span of ``phi(t z_i), phi'(t z_i)``.  That
    span is parametrized by the confluent divided differences
    ``phi[xi_0..xi_k]`` on the doubled knots, in which the Gram stays well
    conditioned as ``t -> 0``; the constraints become ``<D_k, p> = delta_k0``.
    At ``t = 0`` this is exactly :func:`limit_precert`.
    """
    z = as_nodes(z, exact=False)
    if t < 0:
        raise ValueError("scale t must be nonnegative")
    if t == 0:
        cert = limit_precert(kernel, z.size)
        return Certificate(cert.source, kernel,
                           {"type": "vanishing", "t": 0.0, "z": z.tolist()},
                           None, cert.cond_estimate)
    x = t * z
    xi = _confluent_knots(x)
    basis = [divided_difference_combo(kernel, xi[:k + 1]) for k in range(xi.size)]
    G = np.array([[bk.inner(kernel, bl) for bl in basis] for bk in basis])
    G = 0.5 * (G + G.T)
    rhs = np.zeros(xi.size)
    rhs[0] = 1.0
    b, cond = _spd_solve(G, rhs, "vanishing precertificate")
    source = AtomCombo.empty()
    for bk, Dk in zip(b, basis):
        source = source + Dk.scaled(bk)
    with np.errstate(all="ignore"):
        try:
            c = _newton_to_hermite(x, b)
            nominal = AtomCombo(np.concatenate([x, x]),
                                np.repeat([0, 1], x.size), c)
        except np.linalg.LinAlgError:
            nominal = None
    return Certificate(source, kernel, {"type": "vanishing", "t": float(t),
                                        "z": z.tolist()}, nominal, cond)


def limit_precert(kernel: Kernel, N: int) -> Certificate:
    """Limit precertificate: ``eta(0) = 1`` and ``eta^(i)(0) = 0`` for ``i < 2N``."""
    if N < 1:
        raise ValueError("N must be >= 1")
    inj = injectivity_check(kernel, 2 * N - 1)
    if not inj:
        raise PreconditionError(
            f"iota_{2 * N - 1}",
            f"phi(0), ..., phi^({2 * N - 1})(0) are linearly dependent; "
            f"the injectivity hypothesis iota_{2 * N - 1} fails")
    G = gram_Fk(kernel, 2 * N - 1).matrix
    rhs = np.zeros(2 * N)
    rhs[0] = 1.0
    b, cond = _spd_solve(G, rhs, "limit precertificate")
    source = AtomCombo(np.zeros(2 * N), np.arange(2 * N), b)
    return Certificate(source, kernel, {"type": "limit", "N": int(N)},
                       source, cond)


def gaussian_etaW_closed_form(N: int, x, sigma: float = 1.0):
    """``exp(-u**2/4) * sum_{k=0}^{N-1} u**(2k) / (4**k k!)`` with ``u = x/sigma``.

    The sum starts at ``k = 0`` so that ``N = 1`` gives ``exp(-u**2/4)``; this
    range agrees with the linear-system solve of :func:`limit_precert`.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    u = np.asarray(x, dtype=float) / sigma
    q = u * u / 4.0
    term = np.ones_like(q)
    total = np.ones_like(q)
    for k in range(1, N):
        term = term * q / k
        total = total + term
    return total * np.exp(-q)


def etaW_curvature(kernel: Kernel, N: int) -> float:
    """The ``2N``-th derivative of the limit precertificate at the origin."""
    inj = injectivity_check(kernel, 2 * N + 1)
    if not inj:
        raise PreconditionError(f"iota_{2 * N + 1}",
                                f"injectivity hypothesis iota_{2 * N + 1} fails")
    return float(limit_precert(kernel, N).eval(0.0, 2 * N))


def gaussian_curvature_closed_form(N: int) -> float:
    return -math.factorial(2 * N) / (2 ** (2 * N) * math.factorial(N))


def hermite_at_zero(n: int) -> Fraction:
    """Value at 0 of the ``n``-th Hermite polynomial normalized so that
    ``d^n/dx^n exp(-x**2/4) = (-1)**n H_n(x) exp(-x**2/4)``.

    Computed exactly from ``H_{k+2}(0) = -(k+1)/2 * H_k(0)``.
    """
    vals = [Fraction(1), Fraction(0)]
    for k in range(n - 1):
        vals.append(-Fraction(k + 1, 2) * vals[k])
    return vals[n]


def hermite_at_zero_closed_form(k: int) -> Fraction:
    """``(-1)**(k+1) (2k+1)! / (2**(2k+1) k!)``, the value at index ``2k+2``."""
    return Fraction((-1) ** (k + 1) * math.factorial(2 * k + 1),
                    2 ** (2 * k + 1) * math.factorial(k))


# --------------------------------------------------------------------------
# grids


@dataclass(frozen=True)
class GridSpec:
    lo: float
    hi: float
    step: float
    periodic: bool = False

    def points(self) -> np.ndarray:
        n = int(round((self.hi - self.lo) / self.step))
        if self.periodic:
            return self.lo + self.step * np.arange(n)
        return np.linspace(self.lo, self.hi, n + 1)

    def describe(self) -> dict:
        return {"lo": self.lo, "hi": self.hi, "step": self.step,
                "periodic": self.periodic}


def default_grid(kernel: Kernel, center: float = 0.0, *, fine: int = 1) -> GridSpec:
    if isinstance(kernel, TrigKernel):
        step = 1.0 / (16 * kernel.fc * fine)
        return GridSpec(center - 0.5, center + 0.5, step, periodic=True)
    sigma = getattr(kernel, "sigma", 1.0)
    return GridSpec(center - 10 * sigma, center + 10 * sigma, sigma / (50 * fine))


def _check_step(kernel: Kernel, grid: GridSpec) -> None:
    limit = math.pi / (4 * kernel.bandwidth)
    if grid.step >= limit:
        if isinstance(kernel, TrigKernel):
            hint = f"use step < 1/(8 fc) = {1 / (8 * kernel.fc):.4g}"
        else:
            hint = f"use step < {limit:.4g}"
        raise GridError(f"grid step {grid.step:.4g} too coarse for the kernel; {hint}")


def _refine_maxima(cert: Certificate, x: np.ndarray, vals: np.ndarray,
                   step: float) -> tuple[float, float]:
    """Newton-refine grid local maxima of ``|eta|``; return the largest."""
    a = np.abs(vals)
    if a.size < 3:
        i = int(np.argmax(a))
        return float(a[i]), float(x[i])
    idx = np.flatnonzero((a[1:-1] >= a[:-2]) & (a[1:-1] >= a[2:])) + 1
    idx = np.union1d(idx, [0, a.size - 1])
    best, where = -1.0, float(x[0])
    for i in idx:
        x0 = xc = float(x[i])
        for _ in range(6):
            d1 = float(cert.eval(xc, 1))
            d2 = float(cert.eval(xc, 2))
            if d2 == 0:
                break
            xn = xc - d1 / d2
            if abs(xn - x0) > step:
                break
            xc = xn
        v = max(abs(float(cert.eval(xc))), a[i])
        if v > best:
            best, where = v, xc
    return best, where


@dataclass(frozen=True)
class NondegeneracyReport:
    """Outcome of a non-degeneracy scan.

    ``verdict`` is True, False, or None when the sampled supremum falls
    within the strictness margin of 1 (inconclusive).
    """

    sup_off_spike: float
    off_spike_margin: float
    second_derivs_at_spikes: list[float]
    verdict: bool | None
    grid: dict
    argmax: float = float("nan")
    tail_bound: float | None = None
    exclusion_radii: list[tuple[float, float]] = field(default_factory=list)
    messages: list[str] = field(default_factory=list)
    samples: dict | None = None

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in
             ("sup_off_spike", "off_spike_margin", "second_derivs_at_spikes",
              "verdict", "grid", "argmax", "tail_bound", "exclusion_radii",
              "messages")}
        return d

    def to_csv(self) -> str:
        if self.samples is None:
            raise ValueError("report was built without samples")
        return samples_to_csv(self.samples)


def samples_to_csv(samples: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "eta", "d1", "d2"])
    for row in zip(samples["x"], samples["eta"], samples["d1"], samples["d2"]):
        w.writerow([f"{v:.17g}" for v in row])
    return buf.getvalue()


def _gaussian_tail_bound(cert: Certificate, lo: float, hi: float) -> float:
    """Bound on ``|eta|`` outside ``[lo, hi]`` from monotone envelopes."""
    kern = cert.kernel
    src = cert.source
    combo = src.combo if isinstance(src, Element) else src
    if isinstance(src, Element) and src.extra is not None:
        return math.inf
    s = math.sqrt(2.0) * kern.sigma
    bound_lo = bound_hi = 0.0
    for xj, dj, cj in zip(combo.positions, combo.orders, combo.coeffs):
        dlo, dhi = xj - lo, hi - xj
        if min(dlo, dhi) < s * math.sqrt(max(dj, 1)):
            return math.inf
        bound_lo += abs(cj) * float(kern.profile_envelope(int(dj), dlo))
        bound_hi += abs(cj) * float(kern.profile_envelope(int(dj), dhi))
    return max(bound_lo, bound_hi)


def check_nondegeneracy(cert: Certificate, grid: GridSpec | None = None, *,
                        margin: float = MARGIN, keep_samples: bool = False,
                        ) -> NondegeneracyReport:
    """Decide whether ``|eta| < 1`` away from the spikes with strict
    curvature at them.

    Around every spike an exclusion interval is certified by a Taylor
    argument: ``eta`` equals 1 there with its first ``m - 1`` derivatives
    vanishing (``m = 2`` for interpolating certificates, ``m = 2N`` for the
    limit), so ``eta^(m) < 0`` on the interval forces ``eta < 1`` on it.
    Each side extends up to the first sign change of ``eta^(m)``, then
    further while ``eta`` keeps decreasing away from the spike, capped by a
    bandwidth-scale reach and by the midpoint to the neighbouring spike.
    The remaining grid is scanned, local maxima are Newton-refined, and on
    the line the tail beyond the grid is bounded analytically.
    """
    kern = cert.kernel
    spikes = np.sort(cert.spikes)
    if grid is None:
        grid = default_grid(kern, float(np.mean(spikes)) if spikes.size else 0.0)
    _check_step(kern, grid)
    limit = cert.meta.get("type") == "limit"
    m = 2 * int(cert.meta["N"]) if limit else 2
    msgs: list[str] = []

    # curvature at the spikes
    curv = [float(cert.eval(x, m)) for x in spikes]
    curv_ok = all(c < -1e-10 * max(1.0, abs(c)) for c in curv) and all(
        c < 0 for c in curv)
    if not curv_ok:
        msgs.append("non-negative curvature at a spike")

    # exclusion intervals: grow each side up to the first sign change of
    # eta^(m), never past the midpoint to a neighbouring spike
    reach = 4 * math.pi / kern.bandwidth
    if grid.periodic:
        reach = min(reach, 0.25 * (grid.hi - grid.lo))
    radii = []
    for i, (x0, c) in enumerate(zip(spikes, curv)):
        sides = []
        for sgn in (-1.0, 1.0):
            j = i + int(sgn)
            cap = reach
            if 0 <= j < spikes.size:
                cap = min(cap, 0.5 * abs(spikes[j] - x0))
            u = x0 + sgn * np.linspace(0.0, cap, 2049)[1:]
            low = cert.eval(u) <= -1
            bad = (cert.eval(u, m) >= 0) | low
            k = int(np.argmax(bad)) if bad.any() else u.size
            if k == 0:
                sides.append(0.0)
                continue
            # past the Taylor core, eta keeps decreasing while it moves away
            grow = (sgn * cert.eval(u[k:], 1) < 0) & ~low[k:]
            k += int(np.argmin(grow)) if not grow.all() else grow.size
            sides.append(abs(u[k - 1] - x0))
        if min(sides) == 0.0:
            msgs.append(f"no concave neighbourhood found at x={x0:.6g}")
        radii.append((float(sides[0]), float(sides[1])))
    x = grid.points()
    keep = np.ones(x.size, bool)
    period = grid.hi - grid.lo
    for x0, (rl, rr) in zip(spikes, radii):
        off = x - x0
        if grid.periodic:
            off = (off + 0.5 * period) % period - 0.5 * period
        keep &= ~((off >= -rl) & (off <= rr))
        keep &= np.abs(off) > 1e-12
    xs = x[keep]
    vals = cert.eval(xs)
    sup, argmax = _refine_maxima(cert, xs, vals, grid.step) if xs.size else (0.0, math.nan)

    tail = None
    if isinstance(kern, GaussianKernel) and not grid.periodic:
        tail = _gaussian_tail_bound(cert, grid.lo, grid.hi)
        if tail >= 1 - margin:
            msgs.append(f"tail bound {tail:.3g} does not certify |eta|<1 beyond the grid")
        sup_all = max(sup, tail)
    else:
        sup_all = sup

    if not curv_ok or sup_all > 1.0 + 1e-12:
        verdict: bool | None = False
    elif sup_all <= 1.0 - margin and all(min(r) > 0 for r in radii):
        verdict = True
    else:
        verdict = None
        msgs.append("supremum within the strictness margin of 1: inconclusive")

    samples = None
    if keep_samples:
        samples = {"x": x, "eta": cert.eval(x), "d1": cert.eval(x, 1),
                   "d2": cert.eval(x, 2)}
    return NondegeneracyReport(
        sup_off_spike=float(sup), off_spike_margin=float(1.0 - sup_all),
        second_derivs_at_spikes=curv, verdict=verdict,
        grid={**grid.describe(), "curvature_order": m}, argmax=float(argmax),
        tail_bound=tail, exclusion_radii=radii, messages=msgs, samples=samples)


@dataclass(frozen=True)
class NecessaryReport:
    holds: bool
    sup: float
    argmax: float

    def __bool__(self) -> bool:
        return self.holds


def necessary_condition_check(kernel: Kernel, N: int,
                              grid: GridSpec | None = None) -> NecessaryReport:
    """Whether the limit precertificate satisfies ``sup |eta| <= 1 + 1e-8``."""
    cert = limit_precert(kernel, N)
    grid = grid or default_grid(kernel)
    x = grid.points()
    vals = cert.eval(x)
    sup, where = _refine_maxima(cert, x, vals, grid.step)
    if isinstance(kernel, GaussianKernel):
        sup = max(sup, _gaussian_tail_bound(cert, grid.lo, grid.hi))
    return NecessaryReport(bool(sup <= 1 + 1e-8), float(sup), float(where))


# --------------------------------------------------------------------------
# asymptotics


@dataclass(frozen=True)
class ConvergenceReport:
    rows: list[tuple[float, int, float]]

    def gaps(self, order: int = 0) -> tuple[np.ndarray, np.ndarray]:
        sel = [(t, g) for t, o, g in self.rows if o == order]
        t, g = zip(*sel)
        return np.array(t), np.array(g)

    def slope(self, order: int = 0) -> float:
        t, g = self.gaps(order)
        ok = (t > 0) & (g > 0)
        return float(np.polyfit(np.log(t[ok]), np.log(g[ok]), 1)[0])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "order", "sup_gap"])
        for t, o, g in self.rows:
            w.writerow([f"{t:.17g}", o, f"{g:.17g}"])
        return buf.getvalue()


def _sup_grid(kernel: Kernel, z) -> np.ndarray:
    if isinstance(kernel, TrigKernel):
        return default_grid(kernel, fine=4).points()
    return default_grid(kernel).points()


def convergence_report(kernel: Kernel, z, t_list: Sequence[float],
                       max_order: int = 0, grid: GridSpec | None = None,
                       ) -> ConvergenceReport:
    """Sup-norm gaps ``|eta_V,t^(l) - eta_W^(l)|`` on a grid, ``l <= max_order``."""
    z = as_nodes(z, exact=False)
    x = grid.points() if grid is not None else _sup_grid(kernel, z)
    w = limit_precert(kernel, z.size)
    ref = [w.eval(x, l) for l in range(max_order + 1)]
    rows = []
    for t in t_list:
        if t < 0:
            raise ValueError("t must be nonnegative")
        v = vanishing_precert(kernel, float(t), z)
        for l in range(max_order + 1):
            gap = 0.0 if t == 0 else float(np.max(np.abs(v.eval(x, l) - ref[l])))
            rows.append((float(t), l, gap))
    return ConvergenceReport(rows)


@dataclass(frozen=True)
class SecondDerivAsymptotics:
    measured: np.ndarray
    predicted: np.ndarray

    @property
    def relative_gap(self) -> np.ndarray:
        return self.measured / self.predicted - 1.0

    def __iter__(self):
        return iter((self.measured, self.predicted))


def second_deriv_asymptotics(kernel: Kernel, z, t: float) -> SecondDerivAsymptotics:
    """Compare ``eta_V,t''(t z_i)`` with its leading-order prediction
    ``t**(2N-2) * eta_W^(2N)(0) * rho_i``, ``rho_i = 2/(2N)! prod_{j!=i}(z_i-z_j)**2``.
    """
    z = as_nodes(z, exact=False)
    N = z.size
    v = vanishing_precert(kernel, t, z)
    measured = v.eval(t * z, 2)
    curv = float(limit_precert(kernel, N).eval(0.0, 2 * N))
    rho = np.array([2.0 / math.factorial(2 * N)
                    * np.prod([(zi - zj) ** 2 for j, zj in enumerate(z) if j != i])
                    for i, zi in enumerate(z)])
    return SecondDerivAsymptotics(np.asarray(measured), t ** (2 * N - 2) * curv * rho)


# --------------------------------------------------------------------------
# lambda certificate


def lambda_certificate(kernel: Kernel, y_plus_w, lam: float, measure) -> Certificate:
    """``eta = Phi^* (y + w - Phi m) / lam`` for a candidate measure ``m``.

    ``measure`` has ``amplitudes`` and ``positions``; ``y_plus_w`` is an
    :class:`~spikeres.kernels.Element` or :class:`AtomCombo` (or anything
    with an ``element`` attribute holding one).
    """
    if not lam > 0:
        raise ValueError("lambda must be positive: the certificate is undefined at 0")
    data = getattr(y_plus_w, "element", y_plus_w)
    resid = Element.of(data) - Element(AtomCombo.spikes(measure.amplitudes,
                                                        measure.positions))
    pos = np.asarray(measure.positions, float)
    return Certificate(resid.scaled(1.0 / lam), kernel,
                       {"type": "lambda", "lambda": float(lam),
                        "positions": pos.tolist(),
                        "amplitudes": np.asarray(measure.amplitudes, float).tolist()})
