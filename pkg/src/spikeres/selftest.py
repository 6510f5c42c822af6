"""Quick invariant suites run by ``spikeres selftest``.

Each suite returns ``(ok, detail)``.  A suite named in ``force_fail`` is run
with a negative tolerance, which no measured error can meet.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Callable

import numpy as np

from . import blasso, certificates as cert, interp, kernels, structmat


def _homogeneity(tol):
    x = [Fraction(-2), Fraction(1), Fraction(3)]
    t = Fraction(1, 7)
    L = interp.lagrange_coeffs(x).entries
    Lt = interp.lagrange_coeffs([t * v for v in x]).entries
    mu, nu = interp.hermite_coeffs(x)
    mut, nut = interp.hermite_coeffs([t * v for v in x])
    err = 0.0
    for i in range(L.shape[0]):
        err = max(err, max(abs(float(Lt[i, j] - L[i, j] / t ** i)) for j in range(3)))
    for i in range(6):
        for j in range(3):
            err = max(err, abs(float(mut.entries[i, j] - mu.entries[i, j] / t ** i)))
            err = max(err, abs(float(nut.entries[i, j] - nu.entries[i, j] * t / t ** i)))
    return err <= tol, f"max exact deviation {err:.3g}"


def _checkerboard(tol):
    worst = 0.0
    for k in (kernels.GaussianKernel(1.0), kernels.DirichletKernel(5)):
        G = kernels.gram_Fk(k, 8).matrix
        rep = structmat.is_checkerboard(G)
        worst = max(worst, rep.max_odd_parity_entry / np.max(np.abs(G)))
    return worst <= 1e-10 and tol >= 0, f"worst odd/max {worst:.3g}"


def _pfaffian(tol):
    rng = np.random.default_rng(3)
    worst = 0.0
    for n in (2, 4, 6, 8, 10):
        B = rng.standard_normal((n, n))
        A = B - B.T
        pf = structmat.pfaffian(A)
        det = np.linalg.det(A)
        worst = max(worst, abs(pf * pf - det) / abs(det))
    return worst <= tol, f"max |pf^2-det|/|det| {worst:.3g}"


def _hyp_fourier(tol):
    bad = []
    for fc in range(1, 13):
        k = kernels.DirichletKernel(fc)
        for j in range(2 * fc + 4):
            if bool(kernels.injectivity_check(k, j)) != (j <= 2 * fc):
                bad.append((fc, j))
    return (not bad) and tol >= 0, f"{len(bad)} mismatches"


def _asympt_etaV2(tol):
    k = kernels.GaussianKernel(1.0)
    s = cert.second_deriv_asymptotics(k, [-1.0, 1.0], 1e-2)
    gap = float(np.max(np.abs(s.relative_gap)))
    return gap <= (0.05 if tol >= 0 else tol), f"relative gap {gap:.3g}"


def _gaussian_closed_form(tol):
    k = kernels.GaussianKernel(1.0)
    x = np.linspace(-10, 10, 401)
    err = max(float(np.max(np.abs(cert.limit_precert(k, N).eval(x)
                                  - cert.gaussian_etaW_closed_form(N, x))))
              for N in (1, 2, 3, 4))
    return err <= (1e-8 if tol >= 0 else tol), f"max abs error {err:.3g}"


def _jacobian(tol):
    k = kernels.DirichletKernel(6)
    y = blasso.forward(k, blasso.SpikeTrain([1.0, 0.7], [-0.05, 0.06]))
    a = np.array([0.9, 0.8])
    x = np.array([-0.04, 0.05])
    J = blasso.jacobian(k, y, 0.01, a, x)
    h = 1e-6
    u = np.concatenate([a, x])
    Jfd = np.zeros_like(J)
    for j in range(4):
        e = np.zeros(4)
        e[j] = h * max(1.0, abs(u[j]))
        fp = blasso.first_order_system(k, y, 0.01, (u + e)[:2], (u + e)[2:])
        fm = blasso.first_order_system(k, y, 0.01, (u - e)[:2], (u - e)[2:])
        Jfd[:, j] = (fp - fm) / (2 * e[j])
    rel = float(np.max(np.abs(J - Jfd)) / np.max(np.abs(J)))
    return rel <= (1e-5 if tol >= 0 else tol), f"relative error {rel:.3g}"


SUITES: dict[str, tuple[Callable, float]] = {
    "homogeneity": (_homogeneity, 0.0),
    "checkerboard": (_checkerboard, 0.0),
    "pfaffian": (_pfaffian, 1e-8),
    "hyp-fourier": (_hyp_fourier, 0.0),
    "asympt-etaV2": (_asympt_etaV2, 0.0),
    "gaussian-closed-form": (_gaussian_closed_form, 0.0),
    "jacobian": (_jacobian, 0.0),
}


def run(force_fail: set[str] | None = None) -> list[tuple[str, bool, str]]:
    force_fail = force_fail or set()
    out = []
    for name, (fn, tol) in SUITES.items():
        eff = -1.0 if name in force_fail else tol
        try:
            ok, detail = fn(eff)
        except Exception as exc:  # a crashing suite is a failed suite
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append((name, bool(ok), detail))
    return out
