"""Forward model, a grid-then-continuous BLASSO solver for positive spikes,
and the support-recovery experiment harness.

The solver works in two stages.  A nonnegative LASSO on a uniform grid is
solved by monotone FISTA using only Gram inner products; its clusters then
seed Newton iterations on the first-order optimality system

    f(a, x) = [ <phi(x_i), r> + lam ; <phi'(x_i), r> ] = 0,
    r = sum_j a_j phi(x_j) - y,

whose solutions have a saturated dual certificate ``eta = -Phi^* r / lam``
at every spike.  A final dual check scans ``eta`` on a fine grid and, if it
exceeds 1 somewhere, inserts a spike there and refines again.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .certificates import (check_nondegeneracy, lambda_certificate,
                           limit_precert)
from .kernels import AtomCombo, Element, Kernel, TrigKernel
from .structmat import PreconditionError

__all__ = [
    "SpikeTrain",
    "Observation",
    "SolverConfig",
    "RecoveryResult",
    "RefineResult",
    "ExperimentRow",
    "forward",
    "add_noise",
    "solve_blasso",
    "refine_first_order",
    "first_order_system",
    "jacobian",
    "grid_lasso",
    "match_support",
    "recovery_experiment",
    "cell_rng",
    "rows_to_csv",
]


# --------------------------------------------------------------------------
# data types


@dataclass(frozen=True)
class SpikeTrain:
    """``m = sum_i a_i delta_{x_i}``, kept sorted by position."""

    amplitudes: np.ndarray
    positions: np.ndarray

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.amplitudes, float)).ravel()
        x = np.atleast_1d(np.asarray(self.positions, float)).ravel()
        if a.size != x.size:
            raise ValueError("amplitudes and positions must have equal length")
        order = np.argsort(x, kind="stable")
        a, x = a[order], x[order]
        if x.size > 1 and np.min(np.diff(x)) <= 0:
            raise ValueError("spike positions must be pairwise distinct")
        object.__setattr__(self, "amplitudes", a)
        object.__setattr__(self, "positions", x)

    @classmethod
    def empty(cls) -> "SpikeTrain":
        return cls(np.zeros(0), np.zeros(0))

    def __len__(self) -> int:
        return self.positions.size

    def require_positive(self) -> None:
        if np.any(self.amplitudes <= 0):
            raise ValueError("ground-truth amplitudes must be strictly positive")

    def to_dict(self) -> dict:
        return {"amplitudes": self.amplitudes.tolist(),
                "positions": self.positions.tolist()}


@dataclass(frozen=True)
class Observation:
    """Measured data ``y + w``.

    ``element`` carries the data (spike atoms plus, for trigonometric
    kernels, explicit noise coordinates); ``noise_norm`` is ``||w||``.
    """

    element: Element
    noise_norm: float = 0.0
    noise: Element | None = None

    def correlate(self, kernel: Kernel, x, d: int = 0) -> np.ndarray:
        return self.element.correlate(kernel, x, d)

    def norm2(self, kernel: Kernel) -> float:
        return self.element.norm2(kernel)

    def coordinates(self, kernel: Kernel) -> np.ndarray:
        return self.element.coordinates(kernel)


def forward(kernel: Kernel, m: SpikeTrain) -> Observation:
    """``Phi m`` as an observation with no noise."""
    return Observation(Element(AtomCombo.spikes(m.amplitudes, m.positions)), 0.0)


def cell_rng(seed: int, cell: int = 0) -> np.random.Generator:
    """Counter-based generator for cell ``cell`` of a run seeded by ``seed``."""
    return np.random.Generator(np.random.Philox(key=[int(seed) & (2**64 - 1),
                                                     int(cell) & (2**64 - 1)]))


def live_coordinates(kernel: TrigKernel) -> np.ndarray:
    """Coordinates that some atom can reach (nonzero magnitude, and not the
    imaginary part of the zero frequency)."""
    live = np.concatenate([kernel.coeffs > 0, (kernel.coeffs > 0) & (kernel.freqs != 0)])
    return live


def add_noise(obs: Observation, kernel: Kernel, model: str, scale: float,
              seed: int | np.random.Generator = 0, *,
              direction: AtomCombo | None = None) -> Observation:
    """Add noise of norm exactly ``scale``.

    Parameters
    ----------
    model : {"gaussian_iid", "fixed_direction"}
        ``gaussian_iid`` draws i.i.d. normal coordinates (trigonometric
        kernels only) and rescales them; ``fixed_direction`` rescales the
        given atom combination.
    seed : int or Generator
        Source of randomness for ``gaussian_iid``.
    """
    if scale < 0:
        raise ValueError("noise scale must be nonnegative")
    if scale == 0:
        return obs
    if model == "gaussian_iid":
        if not isinstance(kernel, TrigKernel):
            raise ValueError("gaussian_iid noise needs explicit coordinates; "
                             "use fixed_direction for this kernel")
        rng = seed if isinstance(seed, np.random.Generator) else cell_rng(seed)
        w = rng.standard_normal(kernel.dim) * live_coordinates(kernel)
        w *= scale / np.linalg.norm(w)
        noise = Element(AtomCombo.empty(), w)
    elif model == "fixed_direction":
        if direction is None:
            raise ValueError("fixed_direction noise needs a direction")
        nrm = math.sqrt(max(direction.norm2(kernel), 0.0))
        if nrm == 0:
            raise ValueError("noise direction has zero norm")
        noise = Element(direction.scaled(scale / nrm))
    else:
        raise ValueError(f"unknown noise model {model!r}")
    total = noise if obs.noise is None else obs.noise + noise
    return Observation(obs.element + noise, math.sqrt(max(total.norm2(kernel), 0.0)),
                       total)


# --------------------------------------------------------------------------
# solver configuration and results


@dataclass(frozen=True)
class SolverConfig:
    """Tuning knobs for :func:`solve_blasso`.

    ``grid_points`` and ``merge_radius`` default to kernel-dependent values
    (16 fc points per unit on the torus, 40 per sigma on the line; merge
    radius of two grid steps).  ``refine_tol`` is measured in certificate
    units: the residual of the optimality system divided by ``lam``.
    """

    lam: float
    grid_points: int | None = None
    fista_max_iter: int = 20000
    fista_tol: float = 1e-6
    refine_max_iter: int = 60
    refine_tol: float = 1e-8
    merge_radius: float | None = None
    amplitude_floor: float = 1e-9
    seed: int = 0
    max_insertions: int = 3
    verify_oversampling: int = 4

    def __post_init__(self):
        if not self.amplitude_floor > 0:
            raise ValueError("amplitude_floor must be positive")
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")


@dataclass(frozen=True)
class RecoveryResult:
    measure: SpikeTrain
    spike_count: int
    dual_sup: float
    dual_at_spikes: list[float]
    position_error_inf: float
    amplitude_error_inf: float
    converged: bool
    iterations: tuple[int, int]
    messages: list[str] = field(default_factory=list)
    residual: float = float("nan")


@dataclass(frozen=True)
class RefineResult:
    train: SpikeTrain
    converged: bool
    iterations: int
    residual: float
    history: list[float]


# --------------------------------------------------------------------------
# stage 1: grid LASSO


def solver_grid(kernel: Kernel, y: Observation, cfg: SolverConfig,
                span: tuple[float, float] | None = None) -> np.ndarray:
    if isinstance(kernel, TrigKernel):
        n = cfg.grid_points or 16 * kernel.fc
        return -0.5 + np.arange(n) / n
    sigma = getattr(kernel, "sigma", 1.0)
    if span is None:
        span = _data_span(y)
    lo, hi = span[0] - 6 * sigma, span[1] + 6 * sigma
    n = cfg.grid_points or int(math.ceil(40 * (hi - lo) / sigma)) + 1
    return np.linspace(lo, hi, n)


def _data_span(y: Observation) -> tuple[float, float]:
    pos = y.element.combo.positions
    if pos.size == 0:
        return (0.0, 0.0)
    return float(pos.min()), float(pos.max())


@dataclass(frozen=True)
class GridLassoResult:
    amplitudes: np.ndarray
    objective: list[float]
    iterations: int
    converged: bool


def grid_lasso(G: np.ndarray, b: np.ndarray, lam: float, *, max_iter: int = 20000,
               tol: float = 1e-12, x0: np.ndarray | None = None) -> GridLassoResult:
    """Monotone FISTA for ``min_{a >= 0} 1/2 a^T G a - b^T a + lam sum(a)``.

    The recorded objective (without the constant ``1/2 ||y||^2``) is
    non-increasing.
    """
    n = b.size
    L = float(np.linalg.eigvalsh(G)[-1]) or 1.0
    step = 1.0 / L

    def obj(a):
        return 0.5 * a @ (G @ a) - b @ a + lam * a.sum()

    x = np.zeros(n) if x0 is None else np.maximum(np.asarray(x0, float), 0)
    yk, tk = x.copy(), 1.0
    hist = [obj(x)]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        z = np.maximum(yk - step * (G @ yk - b + lam), 0.0)
        fz = obj(z)
        if fz <= hist[-1]:
            xn, fn = z, fz
        else:
            xn, fn = x, hist[-1]
        tn = 0.5 * (1 + math.sqrt(1 + 4 * tk * tk))
        # prox-gradient fixed-point residual; the iterate itself stalls on
        # rejected monotone steps, so its change is no stopping signal
        gap = np.linalg.norm(z - yk) / max(np.linalg.norm(z), 1e-300)
        yk = xn + (tk / tn) * (z - xn) + ((tk - 1) / tn) * (xn - x)
        x, tk = xn, tn
        hist.append(fn)
        if it > 10 and gap < tol:
            converged = True
            break
    return GridLassoResult(x, hist, it, converged)


def _clusters(grid: np.ndarray, amps: np.ndarray, floor: float, radius: float,
              period: float | None) -> SpikeTrain:
    idx = np.flatnonzero(amps > floor)
    if idx.size == 0:
        return SpikeTrain.empty()
    groups = [[idx[0]]]
    for i in idx[1:]:
        if grid[i] - grid[groups[-1][-1]] <= radius + 1e-12:
            groups[-1].append(i)
        else:
            groups.append([i])
    if period is not None and len(groups) > 1:
        if grid[groups[0][0]] + period - grid[groups[-1][-1]] <= radius + 1e-12:
            groups[0] = groups.pop() + groups[0]
    a, x = [], []
    for g in groups:
        w = amps[g]
        pos = grid[g].astype(float)
        if period is not None:
            pos = pos[0] + (pos - pos[0] + 0.5 * period) % period - 0.5 * period
        a.append(w.sum())
        x.append(float(w @ pos / w.sum()))
    x = np.array(x)
    if period is not None:
        x = (x + 0.5 * period) % period - 0.5 * period
    return SpikeTrain(np.array(a), x)


# --------------------------------------------------------------------------
# stage 2: Newton on the optimality system


def _corr_blocks(kernel: Kernel, x: np.ndarray, orders) -> dict:
    X, Y = x[:, None], x[None, :]
    return {(p, q): kernel.corr(p, q, X, Y) for p, q in orders}


def first_order_system(kernel: Kernel, y, lam: float, a, x) -> np.ndarray:
    """``f(a, x)`` stacked as ``[f1; f2]`` (length ``2n``)."""
    a = np.asarray(a, float)
    x = np.asarray(x, float)
    r_atoms = AtomCombo.spikes(a, x)
    f1 = r_atoms.correlate(kernel, x, 0) - y.correlate(kernel, x, 0) + lam
    f2 = r_atoms.correlate(kernel, x, 1) - y.correlate(kernel, x, 1)
    return np.concatenate([f1, f2])


def jacobian(kernel: Kernel, y, lam: float, a, x) -> np.ndarray:
    """Analytic Jacobian of :func:`first_order_system` in ``(a, x)``.

    With ``K_pq[i, j] = <phi^(p)(x_i), phi^(q)(x_j)>`` and residual ``r``::

        [[K00, K01 diag(a) + diag(<phi'(x_i), r>)],
         [K10, K11 diag(a) + diag(<phi''(x_i), r>)]]
    """
    a = np.asarray(a, float)
    x = np.asarray(x, float)
    K = _corr_blocks(kernel, x, [(0, 0), (0, 1), (1, 0), (1, 1)])
    r = AtomCombo.spikes(a, x)
    d1 = r.correlate(kernel, x, 1) - y.correlate(kernel, x, 1)
    d2 = r.correlate(kernel, x, 2) - y.correlate(kernel, x, 2)
    top = np.hstack([K[0, 0], K[1, 0].T * a + np.diag(d1)])
    bot = np.hstack([K[1, 0], K[1, 1] * a + np.diag(d2)])
    # K01[i, j] = <phi(x_i), phi'(x_j)> = K10[j, i]
    return np.vstack([top, bot])


def _scaled_residual(f: np.ndarray, n: int, lam: float, bw: float) -> float:
    scale = lam if lam > 0 else 1.0
    return float(max(np.max(np.abs(f[:n]), initial=0.0),
                     np.max(np.abs(f[n:]), initial=0.0) / bw) / scale)


def refine_first_order(kernel: Kernel, y, lam: float, init: SpikeTrain, *,
                       max_iter: int = 60, tol: float = 1e-8,
                       merge_radius: float = 0.0,
                       _restarted: bool = False) -> RefineResult:
    """Damped Newton on the optimality system starting from ``init``.

    Convergence is declared when ``max(|f1|, |f2| / bandwidth) / lam`` drops
    below ``tol`` (absolute when ``lam == 0``), or below the roundoff floor
    of that quantity when it is larger.  Singular Jacobians raise
    :class:`numpy.linalg.LinAlgError` with the iterate attached as
    ``exc.iterate``; spikes that collide are merged once.
    """
    a = init.amplitudes.copy()
    x = init.positions.copy()
    n = x.size
    bw = kernel.bandwidth
    if n == 0:
        return RefineResult(init, True, 0, 0.0, [0.0])
    f = first_order_system(kernel, y, lam, a, x)
    res = _scaled_residual(f, n, lam, bw)
    # f cancels terms of size |<phi(x_i), y>|, which bounds its accuracy
    size = np.concatenate([np.abs(y.correlate(kernel, x)),
                           np.abs(y.correlate(kernel, x, 1)) / bw])
    tol = max(tol, 16 * np.finfo(float).eps * float(size.max())
              / (lam if lam > 0 else 1.0))
    hist = [res]
    it = 0
    while res >= tol and it < max_iter:
        it += 1
        J = jacobian(kernel, y, lam, a, x)
        # column scaling keeps the position block comparable to amplitudes
        cs = np.concatenate([np.ones(n), np.full(n, 1.0 / bw)])
        try:
            step = np.linalg.solve(J * cs, -f) * cs
        except np.linalg.LinAlgError as exc:
            exc.iterate = SpikeTrain(a, x) if np.all(np.diff(np.sort(x)) > 0) else None
            raise
        if not np.all(np.isfinite(step)):
            err = np.linalg.LinAlgError("singular Jacobian")
            err.iterate = SpikeTrain(a, x)
            raise err
        # cap position moves to a fraction of the kernel scale
        dx = step[n:]
        cap = 0.25 * math.pi / bw
        big = np.max(np.abs(dx), initial=0.0)
        alpha = min(1.0, cap / big) if big > 0 else 1.0
        accepted = False
        for _ in range(30):
            an = a + alpha * step[:n]
            xn = x + alpha * dx
            fn = first_order_system(kernel, y, lam, an, xn)
            rn = _scaled_residual(fn, n, lam, bw)
            if rn < res or rn < tol:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            break
        a, x, f, res = an, xn, fn, rn
        hist.append(res)
        xs = np.sort(x)
        if n > 1 and np.min(np.diff(xs)) < merge_radius and not _restarted:
            merged = _merge_close(SpikeTrain(a, x) if np.all(np.diff(xs) > 0)
                                  else _collapse_duplicates(a, x), merge_radius)
            return refine_first_order(kernel, y, lam, merged, max_iter=max_iter,
                                      tol=tol, merge_radius=merge_radius,
                                      _restarted=True)
    try:
        train = SpikeTrain(a, x)
    except ValueError:
        train = _collapse_duplicates(a, x)
    return RefineResult(train, bool(res < tol), it, res, hist)


def _collapse_duplicates(a, x) -> SpikeTrain:
    order = np.argsort(x)
    a, x = np.asarray(a)[order], np.asarray(x)[order]
    keep_a, keep_x = [a[0]], [x[0]]
    for ai, xi in zip(a[1:], x[1:]):
        if xi <= keep_x[-1]:
            keep_a[-1] += ai
        else:
            keep_a.append(ai)
            keep_x.append(xi)
    return SpikeTrain(keep_a, keep_x)


def _merge_close(m: SpikeTrain, radius: float) -> SpikeTrain:
    if len(m) < 2:
        return m
    a, x = list(m.amplitudes), list(m.positions)
    out_a, out_x = [a[0]], [x[0]]
    for ai, xi in zip(a[1:], x[1:]):
        if xi - out_x[-1] < radius:
            tot = out_a[-1] + ai
            w = (abs(out_a[-1]), abs(ai))
            out_x[-1] = (w[0] * out_x[-1] + w[1] * xi) / (sum(w) or 1.0)
            out_a[-1] = tot
        else:
            out_a.append(ai)
            out_x.append(xi)
    return SpikeTrain(out_a, out_x)


def _fit_amplitudes(kernel: Kernel, y, lam: float, x: np.ndarray) -> np.ndarray:
    """Amplitudes solving ``f1 = 0`` at fixed positions (least squares)."""
    K = kernel.corr(0, 0, x[:, None], x[None, :])
    rhs = y.correlate(kernel, x) - lam
    return np.linalg.lstsq(K, rhs, rcond=1e-13)[0]


# --------------------------------------------------------------------------
# full solve


def _verify_points(kernel: Kernel, grid: np.ndarray, over: int) -> np.ndarray:
    if isinstance(kernel, TrigKernel):
        n = grid.size * over
        return -0.5 + np.arange(n) / n
    return np.linspace(grid[0], grid[-1], (grid.size - 1) * over + 1)


def _dual_scan(kernel: Kernel, y, lam: float, m: SpikeTrain, pts: np.ndarray):
    """Sup of the dual certificate and the location of the worst violation
    away from the spikes."""
    cert = lambda_certificate(kernel, y, lam, m)
    vals = cert.eval(pts)
    step = pts[1] - pts[0]
    # local maxima of eta, Newton-refined
    inner = np.flatnonzero((vals[1:-1] >= vals[:-2]) & (vals[1:-1] >= vals[2:])) + 1
    cand = list(inner) + [int(np.argmax(vals))]
    best_v, best_x = -math.inf, float(pts[int(np.argmax(vals))])
    for i in set(cand):
        xc = float(pts[i])
        for _ in range(8):
            d1 = float(cert.eval(xc, 1))
            d2 = float(cert.eval(xc, 2))
            if d2 >= 0:
                break
            xn = xc - d1 / d2
            if abs(xn - pts[i]) > step:
                break
            xc = xn
        v = float(cert.eval(xc))
        if v > best_v:
            best_v, best_x = v, xc
    at_spikes = cert.eval(m.positions).tolist() if len(m) else []
    sup = max(float(np.max(np.abs(vals))), abs(best_v))
    return sup, best_v, best_x, at_spikes


def solve_blasso(kernel: Kernel, y: Observation, cfg: SolverConfig, *,
                 truth: SpikeTrain | None = None) -> RecoveryResult:
    """Solve the positive BLASSO for data ``y`` with regularization ``cfg.lam``.

    Returns the refined measure with dual diagnostics; when ``truth`` is
    given, errors are computed against it by optimal matching.
    """
    lam = cfg.lam
    if not lam > 0:
        raise ValueError("solve_blasso requires lambda > 0")
    msgs: list[str] = []
    grid = solver_grid(kernel, y, cfg)
    period = 1.0 if isinstance(kernel, TrigKernel) else None
    step = float(grid[1] - grid[0])
    radius = cfg.merge_radius if cfg.merge_radius is not None else 2 * step
    b = y.correlate(kernel, grid)
    pts = _verify_points(kernel, grid, cfg.verify_oversampling)

    corr_y = y.correlate(kernel, pts)
    # eta = Phi^*(y - Phi m) / lam cancels two terms of size max|Phi^* y|,
    # so its evaluation carries this much roundoff
    dual_floor = 16 * np.finfo(float).eps * float(np.max(np.abs(corr_y))) / lam
    dual_tol = 10 * cfg.refine_tol + dual_floor

    # zero measure is optimal when the correlation never exceeds lambda
    if float(np.max(corr_y)) <= lam:
        sup, _, _, _ = _dual_scan(kernel, y, lam, SpikeTrain.empty(), pts)
        return _result(SpikeTrain.empty(), sup, [], True, (0, 0), msgs, 0.0, truth)

    G = kernel.corr(0, 0, grid[:, None], grid[None, :])
    lasso = grid_lasso(G, b, lam, max_iter=cfg.fista_max_iter, tol=cfg.fista_tol)
    if not lasso.converged:
        msgs.append(f"grid LASSO stopped after {lasso.iterations} iterations")
    floor = cfg.amplitude_floor * max(float(lasso.amplitudes.max(initial=0.0)), 1e-300)
    init = _clusters(grid, lasso.amplitudes, floor, radius, period)
    if len(init) == 0:
        init = SpikeTrain([float(np.max(b) - lam) / float(G[0, 0])],
                          [float(grid[int(np.argmax(b))])])

    current = init
    refine_iters = 0
    ok = False
    res = math.nan
    for attempt in range(cfg.max_insertions + 1):
        try:
            out = refine_first_order(kernel, y, lam, current,
                                     max_iter=cfg.refine_max_iter, tol=cfg.refine_tol,
                                     merge_radius=0.5 * radius)
        except np.linalg.LinAlgError as exc:
            msgs.append(f"Newton failed ({exc}); falling back to grid clusters")
            fallback = getattr(exc, "iterate", None) or current
            sup, _, _, at = _dual_scan(kernel, y, lam, fallback, pts)
            return _result(fallback, sup, at, False, (lasso.iterations, refine_iters),
                           msgs, math.nan, truth)
        refine_iters += out.iterations
        m = out.train
        ok, res = out.converged, out.residual
        # remove spikes with non-positive amplitude and refine again
        keep = m.amplitudes > cfg.amplitude_floor * max(float(np.max(m.amplitudes)), 0.0)
        if not np.all(keep) and np.any(keep):
            m = SpikeTrain(m.amplitudes[keep], m.positions[keep])
            out = refine_first_order(kernel, y, lam, m, max_iter=cfg.refine_max_iter,
                                     tol=cfg.refine_tol, merge_radius=0.5 * radius)
            refine_iters += out.iterations
            m, ok, res = out.train, out.converged, out.residual
            msgs.append("pruned non-positive spikes")
        sup, top_v, top_x, at = _dual_scan(kernel, y, lam, m, pts)
        far = np.min(np.abs(m.positions - top_x), initial=math.inf) > 0.5 * step
        if top_v > 1 + dual_tol and far and attempt < cfg.max_insertions:
            x_new = np.append(m.positions, top_x)
            a_new = np.append(m.amplitudes, 0.0)
            try:
                a_fit = _fit_amplitudes(kernel, y, lam, np.sort(x_new))
                cand = SpikeTrain(a_fit, np.sort(x_new))
                if np.all(cand.amplitudes > 0):
                    current = cand
                else:
                    current = SpikeTrain(np.where(a_new > 0, a_new, 0.1 * np.max(
                        m.amplitudes)), x_new)
            except (ValueError, np.linalg.LinAlgError):
                current = SpikeTrain(np.where(a_new > 0, a_new, 0.1 * np.max(
                    m.amplitudes)), x_new)
            msgs.append(f"dual certificate exceeds 1 at x={top_x:.6g}; inserted a spike")
            continue
        break
    positive = bool(np.all(m.amplitudes > 0))
    dual_ok = sup <= 1 + dual_tol
    if dual_ok and sup > 1 + 10 * cfg.refine_tol:
        msgs.append(f"dual excess {sup - 1:.3g} is within the roundoff floor {dual_floor:.3g}")
    converged = bool(ok and positive and dual_ok)
    if not positive:
        msgs.append("negative amplitude in refined measure")
    if not dual_ok:
        msgs.append(f"dual certificate sup {sup:.3g} exceeds 1")
    return _result(m, sup, at, converged, (lasso.iterations, refine_iters), msgs,
                   res, truth)


def _result(m, sup, at, converged, iters, msgs, res, truth) -> RecoveryResult:
    if truth is not None:
        pe, ae, _ = match_support(m, truth)
    else:
        pe = ae = math.nan
    return RecoveryResult(m, len(m), float(sup), [float(v) for v in at], pe, ae,
                          bool(converged), tuple(int(i) for i in iters), msgs,
                          float(res))


# --------------------------------------------------------------------------
# matching and experiments


def match_support(recovered: SpikeTrain, truth: SpikeTrain) -> tuple[float, float, bool]:
    """Sup-norm position/amplitude errors under the optimal bijection.

    Counts that differ give ``(inf, inf, False)``.
    """
    if len(recovered) != len(truth):
        return math.inf, math.inf, False
    if len(truth) == 0:
        return 0.0, 0.0, True
    cost = np.abs(recovered.positions[:, None] - truth.positions[None, :])
    r, c = linear_sum_assignment(cost)
    pe = float(np.max(cost[r, c]))
    ae = float(np.max(np.abs(recovered.amplitudes[r] - truth.amplitudes[c])))
    return pe, ae, True


@dataclass(frozen=True)
class ExperimentRow:
    t: float
    trial: int
    spike_count: int
    pos_err: float
    amp_err: float
    dual_sup: float
    normalized_err: float
    converged: bool
    lam: float = float("nan")
    noise_norm: float = float("nan")
    error: str = ""

    FIELDS = ("t", "trial", "spike_count", "pos_err", "amp_err", "dual_sup",
              "normalized_err", "converged")


def rows_to_csv(rows: Sequence[ExperimentRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ExperimentRow.FIELDS)
    for r in rows:
        w.writerow([f"{r.t:.17g}", r.trial, r.spike_count, f"{r.pos_err:.17g}",
                    f"{r.amp_err:.17g}", f"{r.dual_sup:.17g}",
                    f"{r.normalized_err:.17g}", int(r.converged)])
    return buf.getvalue()


def _noise_direction(kernel: Kernel, x: np.ndarray, rng: np.random.Generator) -> AtomCombo:
    """Random unit-free direction in the span of atoms near the cluster."""
    sigma = getattr(kernel, "sigma", 1.0)
    pos = np.concatenate([x, x, x.mean() + sigma * np.array([-2.0, -1.0, 1.0, 2.0])])
    orders = np.concatenate([np.zeros(x.size, int), np.ones(x.size, int),
                             np.zeros(4, int)])
    return AtomCombo(pos, orders, rng.standard_normal(pos.size))


def _run_cell(args) -> ExperimentRow:
    (spec, max_deriv, a0, z0, t, trial, c_lam, rho, seed, cell, overrides) = args
    from .kernels import parse_kernel
    kernel = parse_kernel(spec, max_deriv=max_deriv)
    N = len(z0)
    truth = SpikeTrain(a0, t * np.asarray(z0, float))
    lam = c_lam * t ** (2 * N - 1)
    noise = rho * lam
    rng = cell_rng(seed, cell)
    obs = forward(kernel, truth)
    try:
        if noise > 0:
            if isinstance(kernel, TrigKernel):
                obs = add_noise(obs, kernel, "gaussian_iid", noise, rng)
            else:
                obs = add_noise(obs, kernel, "fixed_direction", noise,
                                direction=_noise_direction(kernel, truth.positions, rng))
        cfg = SolverConfig(lam=lam, seed=seed, **overrides)
        res = solve_blasso(kernel, obs, cfg, truth=truth)
        e = max(res.amplitude_error_inf, res.position_error_inf / t)
        norm_err = e * t ** (2 * N - 1) / (lam + noise)
        return ExperimentRow(float(t), trial, res.spike_count, res.position_error_inf,
                             res.amplitude_error_inf, res.dual_sup, float(norm_err),
                             res.converged, lam, noise)
    except Exception as exc:  # recorded per row, the sweep goes on
        return ExperimentRow(float(t), trial, -1, math.inf, math.inf, math.nan,
                             math.inf, False, lam, noise, f"{type(exc).__name__}: {exc}")


def recovery_experiment(kernel: Kernel, a0, z0, t_list: Sequence[float], *,
                        c_lam: float, rho: float = 0.0, trials: int = 1, seed: int = 0,
                        solver: dict | None = None, workers: int = 1,
                        check_hypotheses: bool = True) -> list[ExperimentRow]:
    """Support-recovery sweep with ``lam = c_lam t**(2N-1)`` and ``||w|| = rho lam``.

    Each ``(t, trial)`` cell draws its noise from ``cell_rng(seed, cell)``,
    so the table does not depend on ``workers``.  The normalized error is
    ``e t**(2N-1) / (lam + ||w||)`` with ``e = max(|a - a0|, |x - t z0| / t)``,
    the sup error in amplitude and rescaled-position coordinates.
    """
    a0 = np.asarray(a0, float)
    z0 = np.asarray(z0, float)
    N = z0.size
    if a0.size != N:
        raise ValueError("a0 and z0 must have the same length")
    SpikeTrain(a0, z0).require_positive()
    if check_hypotheses:
        rep = check_nondegeneracy(limit_precert(kernel, N))
        if rep.verdict is not True:
            raise PreconditionError(
                "etaW_nondegenerate",
                f"limit precertificate is not non-degenerate (sup off 0 = "
                f"{rep.sup_off_spike:.6g}); exact recovery is not expected")
    cells = []
    cell = 0
    for t in t_list:
        if not t > 0:
            raise ValueError("t must be positive")
        for trial in range(trials):
            cells.append((kernel.spec(), kernel.max_deriv, a0.tolist(), z0.tolist(),
                          float(t), trial, float(c_lam), float(rho), int(seed), cell,
                          dict(solver or {})))
            cell += 1
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(_run_cell, cells))
    else:
        rows = [_run_cell(c) for c in cells]
    return rows
