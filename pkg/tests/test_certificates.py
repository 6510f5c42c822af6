import json
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spikeres.blasso import SpikeTrain, forward
from spikeres.certificates import (Certificate, GridError, GridSpec,
                                   check_nondegeneracy, convergence_report,
                                   default_grid, etaW_curvature,
                                   gaussian_curvature_closed_form,
                                   gaussian_etaW_closed_form, hermite_at_zero,
                                   hermite_at_zero_closed_form, lambda_certificate,
                                   limit_precert, necessary_condition_check,
                                   second_deriv_asymptotics, vanishing_precert)
from spikeres.kernels import (DirichletKernel, FourierKernel, GaussianKernel,
                              gamma_gram)
from spikeres.structmat import PreconditionError

# eighth-order central stencil for the first derivative
FD8 = np.array([1 / 280, -4 / 105, 1 / 5, -4 / 5, 0, 4 / 5, -1 / 5, 4 / 105, -1 / 280])


def fd_derivative(cert, x, d, h):
    offs = h * np.arange(-4, 5)
    return float(FD8 @ cert.eval(x + offs, d - 1)) / h


def power_profile(p, fc=10):
    k = np.arange(-fc, fc + 1)
    return FourierKernel((1.0 + np.abs(k)) ** p)


# --------------------------------------------------------------------------
# frozen high-precision values (50-digit mpmath, explicit Fourier sums)


def test_frozen_limit_values_dirichlet():
    k = DirichletKernel(10)
    assert float(limit_precert(k, 3).eval(0.0, 6)) == pytest.approx(
        -1645458807.1981439142, rel=1e-11)
    assert float(limit_precert(k, 2).eval(0.0, 4)) == pytest.approx(
        -1587044.5734637014231, rel=1e-11)
    assert float(limit_precert(k, 2).eval(0.05)) == pytest.approx(
        0.7238224614099607874, rel=1e-12)


@pytest.mark.parametrize("t,val,d2", [
    (0.1, 0.10254815567271689866, -1583.6772273425203957),
    (0.01, -0.079798625591491522927, -52.720576529713973788),
])
def test_frozen_vanishing_values_dirichlet(t, val, d2):
    c = vanishing_precert(DirichletKernel(10), t, [-1.0, 1.0])
    assert float(c.eval(0.3)) == pytest.approx(val, rel=1e-11)
    assert float(c.eval(t, 2)) == pytest.approx(d2, rel=1e-11)


# --------------------------------------------------------------------------
# vanishing precertificate


@pytest.mark.parametrize("kernel", [GaussianKernel(1.0), DirichletKernel(10)], ids=["g", "d"])
def test_single_spike_at_origin(kernel):
    x = np.linspace(-1, 1, 11)
    for t in (0.5, 0.01):
        c = vanishing_precert(kernel, t, [0.0])
        np.testing.assert_allclose(c.eval(x), kernel.corr(0, 0, 0.0, x) / kernel.corr(0, 0, 0, 0),
                                   rtol=1e-12, atol=1e-14)
    g = vanishing_precert(GaussianKernel(1.0), 0.3, [0.0])
    np.testing.assert_allclose(g.eval(x), np.exp(-x ** 2 / 4), rtol=1e-12)


@pytest.mark.parametrize("t", [0.3, 0.1, 0.01, 1e-3])
@pytest.mark.parametrize("kernel,z", [(DirichletKernel(10), [-1.0, 0.0, 1.0]),
                                      (GaussianKernel(1.0), [-1.0, 1.0]),
                                      (DirichletKernel(10), [-1.0, 0.3, 1.0])],
                         ids=["d3", "g2", "d3asym"])
def test_vanishing_constraints(kernel, z, t):
    c = vanishing_precert(kernel, t, z)
    x = t * np.asarray(z)
    cond = gamma_gram(kernel, x).cond_estimate
    tol = min(1e-8, 1e-12 * cond)
    assert np.max(np.abs(c.eval(x) - 1)) < tol
    assert np.max(np.abs(c.eval(x, 1))) < tol * kernel.bandwidth
    assert c.meta == {"type": "vanishing", "t": t, "z": list(z)}
    np.testing.assert_allclose(c.spikes, x)


def test_vanishing_matches_plain_solve_at_moderate_scale():
    # direct (Gamma^* Gamma)^{-1} solve is accurate when t is not small
    k = DirichletKernel(6)
    x = np.array([-0.2, 0.05, 0.3])
    G = gamma_gram(k, x).matrix
    b = np.linalg.solve(G, np.r_[np.ones(3), np.zeros(3)])
    y = np.linspace(0, 1, 33)
    direct = b[:3] @ k.corr(0, 0, x[:, None], y) + b[3:] @ k.corr(1, 0, x[:, None], y)
    c = vanishing_precert(k, 1.0, x)
    np.testing.assert_allclose(c.eval(y), direct, rtol=1e-9, atol=1e-11)
    # nominal Hermite weights reproduce it too
    np.testing.assert_allclose(c.nominal.correlate(k, y), direct, rtol=1e-8, atol=1e-10)


def test_vanishing_t0_is_limit():
    k = DirichletKernel(10)
    v = vanishing_precert(k, 0.0, [-1.0, 0.0, 1.0])
    w = limit_precert(k, 3)
    x = np.linspace(-0.5, 0.5, 17)
    np.testing.assert_array_equal(v.eval(x), w.eval(x))
    assert convergence_report(k, [-1.0, 0.0, 1.0], [0.0]).rows == [(0.0, 0, 0.0)]


def test_vanishing_errors():
    with pytest.raises(ValueError):
        vanishing_precert(GaussianKernel(1.0), -0.1, [0.0, 1.0])
    # four atoms need at least four live Fourier coefficients
    with pytest.raises(PreconditionError):
        vanishing_precert(DirichletKernel(1), 0.2, [-1.0, 1.0])


# --------------------------------------------------------------------------
# limit precertificate


@pytest.mark.parametrize("kernel,N", [(GaussianKernel(1.0), n) for n in (1, 2, 3, 4)]
                         + [(DirichletKernel(10), n) for n in (1, 2, 3)])
def test_limit_constraints(kernel, N):
    w = limit_precert(kernel, N)
    assert float(w.eval(0.0)) == pytest.approx(1.0, abs=1e-8)
    for i in range(1, 2 * N):
        scale = kernel.bandwidth ** i
        assert abs(float(w.eval(0.0, i))) < 1e-8 * scale
    # orthogonality of the dual element to phi^(i)(0)
    src = w.source
    for i in range(2 * N):
        assert src.correlate(kernel, [0.0], i)[0] == pytest.approx(float(i == 0), abs=1e-8 * kernel.bandwidth ** i)


def test_limit_injectivity_error():
    with pytest.raises(PreconditionError) as e:
        limit_precert(DirichletKernel(1), 2)
    assert e.value.hypothesis == "iota_3"
    with pytest.raises(ValueError):
        limit_precert(GaussianKernel(1.0), 0)


@pytest.mark.parametrize("N", [1, 2, 3, 4])
def test_gaussian_closed_form_matches_solve(N):
    x = np.linspace(-10, 10, 401)
    w = limit_precert(GaussianKernel(1.0), N)
    assert np.max(np.abs(w.eval(x) - gaussian_etaW_closed_form(N, x))) < 1e-8


def test_gaussian_closed_form_examples():
    assert gaussian_etaW_closed_form(1, 0.0) == 1.0
    assert gaussian_etaW_closed_form(2, 2.0) == pytest.approx(
        float(limit_precert(GaussianKernel(1.0), 2).eval(2.0)), abs=1e-9)
    assert gaussian_etaW_closed_form(2, 2.0) == pytest.approx(2 * math.exp(-1))
    # sigma rescales the variable
    assert gaussian_etaW_closed_form(3, 1.4, sigma=2.0) == pytest.approx(
        gaussian_etaW_closed_form(3, 0.7))
    w = limit_precert(GaussianKernel(2.0), 3)
    assert float(w.eval(1.4)) == pytest.approx(gaussian_etaW_closed_form(3, 1.4, sigma=2.0), abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.floats(-60, 60).filter(lambda v: abs(v) > 1e-3))
def test_gaussian_closed_form_strictly_inside(N, x):
    v = gaussian_etaW_closed_form(N, x)
    assert 0 <= v < 1


@pytest.mark.parametrize("N", [1, 2, 3, 4])
def test_gaussian_curvature(N):
    k = GaussianKernel(1.0)
    assert etaW_curvature(k, N) == pytest.approx(gaussian_curvature_closed_form(N), rel=1e-6)
    assert gaussian_curvature_closed_form(1) == -0.5


def test_dirichlet_curvature_negative():
    assert etaW_curvature(DirichletKernel(10), 3) < 0


def test_curvature_needs_iota():
    # fc=2 has 5 coefficients: iota_4 holds, iota_5 does not
    limit_precert(DirichletKernel(2), 2)
    with pytest.raises(PreconditionError) as e:
        etaW_curvature(DirichletKernel(2), 2)
    assert e.value.hypothesis == "iota_5"


@pytest.mark.parametrize("k", range(9))
def test_hermite_at_zero_closed_form(k):
    assert hermite_at_zero(2 * k + 2) == hermite_at_zero_closed_form(k)
    assert isinstance(hermite_at_zero(2 * k + 2), Fraction)
    assert hermite_at_zero(2 * k + 1) == 0


def test_hermite_at_zero_matches_kernel_derivatives():
    # d^n/dx^n exp(-x^2/4) at 0 from the Gaussian correlation profile
    k = GaussianKernel(1.0)
    for n in range(0, 12, 2):
        val = float(k.profile_deriv(n, 0.0)) / math.sqrt(math.pi)
        assert val == pytest.approx((-1) ** n * float(hermite_at_zero(n)), rel=1e-13)


# --------------------------------------------------------------------------
# derivatives vs finite differences


@pytest.mark.parametrize("cert", [
    limit_precert(GaussianKernel(1.0), 3),
    limit_precert(DirichletKernel(10), 2),
    vanishing_precert(DirichletKernel(10), 0.05, [-1.0, 0.0, 1.0]),
    vanishing_precert(GaussianKernel(0.7), 0.2, [-1.0, 1.0]),
], ids=["gW3", "dW2", "dV3", "gV2"])
def test_derivatives_match_finite_differences(cert):
    k = cert.kernel
    N = cert.meta.get("N") or len(cert.meta["z"])
    rng = np.random.default_rng(5)
    xs = rng.uniform(-0.5, 0.5, 6) if k.domain == "torus" else rng.uniform(-3, 3, 6)
    dense = np.linspace(-0.5, 0.5, 2001) if k.domain == "torus" else np.linspace(-6, 6, 2001)
    h = 0.1 / k.bandwidth
    for d in range(1, 2 * N + 1):
        scale = np.max(np.abs(cert.eval(dense, d)))
        for x in xs:
            exact = float(cert.eval(x, d))
            approx = fd_derivative(cert, x, d, h)
            assert abs(exact - approx) <= 1e-5 * max(abs(exact), 1e-2 * scale)


# --------------------------------------------------------------------------
# non-degeneracy


@pytest.mark.parametrize("N", [1, 2, 3, 4])
def test_gaussian_limit_nondegenerate(N):
    rep = check_nondegeneracy(limit_precert(GaussianKernel(1.0), N))
    assert rep.verdict is True
    assert rep.sup_off_spike < 1 and rep.off_spike_margin > 0
    assert rep.tail_bound is not None and rep.tail_bound < 1
    assert rep.second_derivs_at_spikes[0] == pytest.approx(gaussian_curvature_closed_form(N), rel=1e-6)


@pytest.mark.parametrize("N", [1, 2, 3])
def test_dirichlet_limit_nondegenerate(N):
    rep = check_nondegeneracy(limit_precert(DirichletKernel(10), N))
    assert rep.verdict is True
    assert rep.grid["periodic"] and rep.grid["curvature_order"] == 2 * N


@pytest.mark.parametrize("t", [0.3, 0.1, 0.02])
def test_dirichlet_vanishing_nondegenerate(t):
    rep = check_nondegeneracy(vanishing_precert(DirichletKernel(10), t, [-1.0, 0.0, 1.0]))
    assert rep.verdict is True
    assert len(rep.second_derivs_at_spikes) == 3 and all(c < 0 for c in rep.second_derivs_at_spikes)
    assert all(min(r) > 0 for r in rep.exclusion_radii)


def test_degenerate_profile():
    k = power_profile(2.0)
    rep = check_nondegeneracy(limit_precert(k, 2))
    assert rep.verdict is False
    nec = necessary_condition_check(k, 2)
    assert not nec and nec.sup > 1


def test_verdict_invariant_on_profiles():
    for p in (0.0, 0.5, 1.0, 2.0):
        rep = check_nondegeneracy(limit_precert(power_profile(p), 2))
        if rep.verdict is True:
            assert rep.sup_off_spike < 1 and all(c < 0 for c in rep.second_derivs_at_spikes)
        if rep.sup_off_spike > 1 + 1e-12:
            assert rep.verdict is False


def test_grid_refusal():
    k = DirichletKernel(10)
    with pytest.raises(GridError, match="1/\\(8 fc\\)"):
        check_nondegeneracy(limit_precert(k, 1), GridSpec(-0.5, 0.5, 1 / 80, periodic=True))
    check_nondegeneracy(limit_precert(k, 1), GridSpec(-0.5, 0.5, 1 / 96, periodic=True))


def test_default_grids():
    g = default_grid(DirichletKernel(10))
    assert g.step == 1 / 160 and g.periodic and g.points().size == 160
    g = default_grid(GaussianKernel(2.0))
    assert (g.lo, g.hi, g.step) == (-20.0, 20.0, 0.04)


def test_necessary_condition():
    for N in (1, 2, 3, 4):
        assert necessary_condition_check(GaussianKernel(1.0), N)
    for N in (1, 2, 3):
        r = necessary_condition_check(DirichletKernel(10), N)
        assert r and r.sup == pytest.approx(1.0, abs=1e-8)


# --------------------------------------------------------------------------
# serialization


def test_certificate_json_roundtrip():
    for c in (vanishing_precert(DirichletKernel(4), 0.1, [-1.0, 1.0]),
              limit_precert(GaussianKernel(0.5), 2)):
        back = Certificate.from_json(c.to_json())
        x = np.linspace(-0.4, 0.4, 9)
        np.testing.assert_array_equal(back.eval(x), c.eval(x))
        assert back.meta == c.meta
        assert json.loads(c.to_json())["kernel"]["spec"] == c.kernel.spec()


def test_report_csv_and_dict():
    rep = check_nondegeneracy(limit_precert(DirichletKernel(3), 1), keep_samples=True)
    lines = rep.to_csv().splitlines()
    assert lines[0] == "x,eta,d1,d2"
    assert len(lines) == 1 + default_grid(DirichletKernel(3)).points().size
    first = [float(v) for v in lines[1].split(",")]
    assert first[1] == float(rep.samples["eta"][0])  # 17 digits round-trip exactly
    json.dumps(rep.to_dict())
    with pytest.raises(ValueError):
        check_nondegeneracy(limit_precert(DirichletKernel(3), 1)).to_csv()


# --------------------------------------------------------------------------
# asymptotics


def test_convergence_decreasing_and_csv():
    rep = convergence_report(DirichletKernel(10), [-1.0, 0.0, 1.0], [0.4, 0.2, 0.01])
    t, g = rep.gaps()
    assert g[2] < g[1] < g[0]
    assert rep.to_csv().splitlines()[0] == "t,order,sup_gap"
    with pytest.raises(ValueError):
        convergence_report(DirichletKernel(10), [-1.0, 1.0], [-0.1])


def test_convergence_slope_asymmetric_nodes():
    # for symmetric nodes the gap is even in t and decays like t^2
    k = DirichletKernel(10)
    ts = np.logspace(-3, -2, 5)
    assert convergence_report(k, [-1.0, 0.3, 1.0], ts).slope() == pytest.approx(1.0, abs=0.2)
    assert convergence_report(k, [-1.0, 0.0, 1.0], ts).slope() == pytest.approx(2.0, abs=0.2)


def test_second_deriv_single_origin():
    k = GaussianKernel(1.0)
    s = second_deriv_asymptotics(k, [0.0], 0.2)
    assert s.predicted[0] == pytest.approx(-0.5)
    assert s.measured[0] == pytest.approx(-0.5, rel=1e-12)


@pytest.mark.parametrize("kernel", [GaussianKernel(1.0), DirichletKernel(10)], ids=["g", "d"])
def test_second_deriv_asymptotics(kernel):
    s = second_deriv_asymptotics(kernel, [-1.0, 1.0], 1e-2)
    assert np.all(np.abs(s.relative_gap) < 0.05)
    measured, predicted = s
    assert np.all(np.sign(measured) == np.sign(predicted))


def test_second_deriv_gap_order():
    # symmetric nodes: the first-order term cancels and the gap scales like t^2
    for kernel in (GaussianKernel(1.0), DirichletKernel(10)):
        g1 = np.max(np.abs(second_deriv_asymptotics(kernel, [-1.0, 1.0], 1e-2).relative_gap))
        g2 = np.max(np.abs(second_deriv_asymptotics(kernel, [-1.0, 1.0], 5e-3).relative_gap))
        assert g2 / g1 < 0.5


# --------------------------------------------------------------------------
# lambda certificate


def test_lambda_certificate_linearity():
    k = DirichletKernel(5)
    m0 = SpikeTrain([1.0, 0.5], [-0.1, 0.2])
    y = forward(k, m0)
    lam = 0.3
    c = lambda_certificate(k, y, lam, SpikeTrain.empty())
    x = np.linspace(0, 1, 13)
    np.testing.assert_allclose(c.eval(x), y.correlate(k, x) / lam, rtol=1e-13)
    # subtracting the truth leaves nothing
    c0 = lambda_certificate(k, y, lam, m0)
    assert np.max(np.abs(c0.eval(x))) < 1e-12
    assert c0.meta["type"] == "lambda"
    np.testing.assert_allclose(c0.spikes, m0.positions)


def test_lambda_must_be_positive():
    k = DirichletKernel(5)
    with pytest.raises(ValueError):
        lambda_certificate(k, forward(k, SpikeTrain([1.0], [0.0])), 0.0, SpikeTrain.empty())
