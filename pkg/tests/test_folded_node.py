import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from mmo_lab.folded_node import (ConvergenceError, FnParams, FnPath, ZoomedState, count_half_turns,
                                 dK_dzbar, eta_transition_map, f_inverse, f_residual, f_solver,
                                 f_solver_log, first_integral_K, fn_field, fn_flow, gauss_integral,
                                 k_delay, k_star_window, level_log_K, level_to_uv, phi_rate_check,
                                 rectified_eta, rectified_flow, rotation_sector,
                                 sector_from_half_turns, strong_canard, uv_to_level,
                                 variational_flow, weak_canard, zoom_in, zoom_intensity, zoom_out)
from mmo_lab.sde_core import State, Trajectory

MU = 0.0685


# -- zoom --------------------------------------------------------------------------
def test_zoom_roundtrip_and_values():
    P = (0.1, 0.01, 0.1)
    z = zoom_in(P, 0.01)
    assert z.as_array() == pytest.approx([1.0, 1.0, 1.0], rel=1e-15)
    back = zoom_out(z, 0.01)
    assert isinstance(back, State)
    assert np.allclose(back, P, rtol=1e-15, atol=0)


@given(x=st.floats(-5, 5), y=st.floats(-5, 5), z=st.floats(-5, 5), eps=st.floats(1e-6, 0.5))
def test_property_zoom_inverse(x, y, z, eps):
    back = zoom_out(zoom_in((x, y, z), eps), eps)
    assert np.allclose(back, (x, y, z), rtol=1e-12, atol=1e-14)


def test_zoomed_intensity():
    assert zoom_intensity(1e-3, 0.01) == pytest.approx(0.0316, abs=1e-4)
    p = FnParams.from_intensities(MU, 0.01, 1e-3, 2e-3)
    assert p.sigma_bar == 1e-3 * 0.01 ** -0.75
    assert p.sigma_bar_p == 2e-3 * 0.01 ** -0.75
    with pytest.raises(ValueError):
        FnParams(mu=1.5, eps=0.01)
    with pytest.raises(ValueError):
        FnParams(mu=0.1, eps=0.01, sigma_bar=-1.0)


# -- canards ------------------------------------------------------------------------
def test_canard_values():
    assert weak_canard(0.0, MU) == (0.0, -MU / 2) or np.allclose(weak_canard(0.0, MU), (0, -MU / 2))
    xs, ys = strong_canard(MU, MU)
    assert (float(xs), float(ys)) == (-1.0, 0.5)


@given(zb=st.floats(-3, 3), mu=st.floats(0.01, 0.9))
def test_property_canards_solve_the_system(zb, mu):
    for curve, dx in ((weak_canard, -1.0), (strong_canard, -1.0 / mu)):
        x, y = curve(zb, mu)
        fx, fy = fn_field(x, y, zb, mu)
        assert fx == pytest.approx(dx, rel=1e-9, abs=1e-9)
        # dy/dzb of the curve is 2 x dx/dzb
        assert fy == pytest.approx(2 * float(x) * dx, rel=1e-9, abs=1e-9)


def test_weak_canard_is_invariant_under_flow():
    x0, y0 = weak_canard(-1.0, MU)
    p = fn_flow(ZoomedState(float(x0), float(y0), -1.0), MU, 1.0)
    assert not p.blown_up
    assert max(np.abs(p.u1).max(), np.abs(p.u2).max()) < 1e-8


def test_reflection_symmetry_of_flow():
    start = ZoomedState(0.3, 0.1, -0.8)
    a = fn_flow(start, MU, 0.2)
    b = fn_flow(ZoomedState(-0.3, 0.1, 0.8), MU, -0.2)
    assert np.allclose(b.zb, -a.zb) and np.allclose(b.xb, -a.xb, atol=1e-10)
    assert np.allclose(b.yb, a.yb, atol=1e-10)


def test_generic_orbit_twists_around_weak_canard():
    x, y = strong_canard(-1.0, MU)
    p = fn_flow(ZoomedState(float(x), float(y) + 0.01, -1.0), MU, 1.0)
    assert count_half_turns(p.u1) >= 1


def test_flow_requires_positive_ratio():
    with pytest.raises(ValueError):
        fn_flow(ZoomedState(0, 0, 0), 0.0, 1.0)


def test_sqrt_eps_correction_hook():
    start = ZoomedState(0.1, 0.0, -0.5)
    plain = fn_flow(start, MU, 0.0)
    zero = fn_flow(start, MU, 0.0, correction=lambda x, y, z: (0.0, 0.0), eps=0.01)
    pushed = fn_flow(start, MU, 0.0, correction=lambda x, y, z: (1.0, 0.0), eps=0.01)
    assert np.array_equal(plain.xb, zero.xb)
    assert not np.allclose(plain.xb, pushed.xb)


# -- rectified coordinate -------------------------------------------------------------
def test_gauss_integral_accuracy():
    for a in (-3.0, -0.4, 0.0, 0.7, 2.5):
        ref = quad(lambda u: math.exp(-u * u / 2), 0.0, a, epsabs=1e-13, epsrel=1e-13)[0]
        assert float(gauss_integral(a)) == pytest.approx(ref, abs=1e-12)


def test_eta_map_trivial_cases():
    xs = np.linspace(-1, 1, 11)
    assert np.array_equal(eta_transition_map(0.0, 0.0, xs, 1e-3).eta, np.zeros(11))
    assert float(eta_transition_map(3e-4, 1e-2, 0.0, 1e-3).eta) == 3e-4
    assert rectified_eta(0.0, -0.5 * (1 + MU), MU) == 0.0


def test_eta_map_precondition_warning():
    with pytest.warns(RuntimeWarning):
        m = eta_transition_map(0.5, 0.0, [0.0, 0.5], 1e-3)
    assert not m.precondition_ok
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert eta_transition_map(1e-4, 1e-2, [0.0], 1e-3).precondition_ok


def test_eta_map_against_rectified_integration():
    mu, eta0, zb0 = 1e-3, 0.5e-3, 0.5e-2
    xs = np.linspace(-1, 1, 81)
    lead = eta_transition_map(eta0, zb0, xs, mu)
    eta, zb = rectified_flow(eta0, zb0, xs, mu)
    scale = np.abs(eta).max()
    assert np.abs(lead.eta - eta).max() < 0.05 * scale
    big = np.abs(eta) >= 0.1 * scale
    assert np.all(np.abs(lead.eta - eta)[big] < 0.05 * np.abs(eta)[big])
    assert np.abs(lead.zb - zb).max() < 0.05 * np.abs(zb).max()


# -- first integral -----------------------------------------------------------------------
def test_first_integral_basics():
    assert first_integral_K(0.0, 0.0, MU) == 1.0
    assert dK_dzbar(0.7, -0.2, 0.0, MU) == 0.0


def _fd_rate(u, zb, mu, h=1e-6):
    fwd = variational_flow(u, zb, zb + h, mu, h=h)
    bwd = variational_flow(u, zb, zb - h, mu, h=h)
    kp = first_integral_K(fwd.u1[-1], fwd.u2[-1], mu)
    km = first_integral_K(bwd.u1[-1], bwd.u2[-1], mu)
    return float((kp - km) / (2 * h))


@pytest.mark.parametrize("u,zb", [((0.3, 0.1), 0.4), ((-0.5, 0.2), -0.7), ((0.8, -0.3), 1.2)])
def test_dK_chain_rule(u, zb):
    fd = MU * _fd_rate(u, zb, MU)
    exact = MU * float(dK_dzbar(u[0], u[1], zb, MU))
    assert fd == pytest.approx(exact, rel=1e-6)


def test_K_conserved_with_frozen_coefficient():
    p = variational_flow((0.4, 0.1), 0.0, 1.0, MU, freeze_zb=0.0)
    K = first_integral_K(p.u1, p.u2, MU)
    assert np.abs(K - K[0]).max() < 1e-8


def test_K_monotone_on_each_side():
    p = variational_flow((0.3, 0.0), -0.9, 0.9, 0.05)
    # log K stays resolved where K itself underflows
    dK = np.diff([level_log_K(a, b, 0.05) for a, b in zip(p.u1, p.u2)])
    mid = 0.5 * (p.zb[1:] + p.zb[:-1])
    assert np.all(dK[mid < -1e-3] > 0)
    assert np.all(dK[mid > 1e-3] < 0)


@given(u1=st.floats(-2, 2).filter(lambda v: abs(v) > 1e-6), u2=st.floats(-1, 1),
       zb=st.floats(-2, 2).filter(lambda v: abs(v) > 1e-6))
def test_property_dK_sign(u1, u2, zb):
    assert np.sign(dK_dzbar(u1, u2, zb, MU)) == -np.sign(zb)


def test_delay_matches_mirror_time():
    for zb0 in (-0.5, -1.0):
        assert k_delay((0.3, 0.0), zb0, 0.02) == pytest.approx(-zb0, abs=0.05)
    with pytest.raises(ValueError):
        k_delay((0.3, 0.0), 0.5, 0.02)


def test_angle_rate_positive_where_K_large():
    p = variational_flow((0.3, 0.0), -0.8, 0.8, 0.05)
    rep = phi_rate_check(p, 0.05)
    assert rep["n"] > 100
    assert rep["positive_fraction"] == 1.0
    assert 0 < rep["c_minus"] <= rep["c_plus"]


# -- implicit function ---------------------------------------------------------------------
def test_f_solver_examples():
    assert f_solver(0.0) == 0.0
    assert f_solver(1e-6) / 1e-6 == pytest.approx(2.0, abs=1e-5)
    f = f_solver(-3.0)
    assert -1 < f < -1 + math.exp(-19) + 2 * math.exp(-38)
    assert f >= -1 + math.exp(-1 - 18)


def test_f_solver_on_wide_range():
    ts = np.linspace(-50, 50, 2001)
    for t in ts:
        assert f_residual(t) < 1e-12
        q = f_solver_log(t)
        assert np.sign(q) == np.sign(t)
        if t < 0:
            # -1 + exp(-1 - 2t^2) <= f, in log form q >= -1 - 2 t^2
            assert q >= -1 - 2 * t * t - 1e-12


def test_f_solver_nonconvergence_raises():
    with pytest.raises(ConvergenceError):
        f_solver_log(3.0, max_iter=1, tol=1e-300)


# below t = -2.5 the gap f + 1 ~ exp(-2t^2) loses float resolution
@given(t=st.floats(-2.5, 6))
def test_property_f_inverse(t):
    f = f_solver(t)
    if f > -1:
        assert f_inverse(f) == pytest.approx(t, abs=1e-9)


def test_f_inverse_domain():
    with pytest.raises(ValueError):
        f_inverse(-1.0)


# -- level curves ----------------------------------------------------------------------------
@pytest.mark.parametrize("K", [0.1, 0.5, 0.9])
@pytest.mark.parametrize("phi", [0.0, math.pi / 3, math.pi, 3 * math.pi / 2])
def test_level_roundtrip(K, phi):
    u1, u2 = level_to_uv(K, phi, MU)
    lc = uv_to_level(u1, u2, MU)
    back = level_to_uv(lc.K, lc.phi, MU)
    assert abs(lc.K - K) < 1e-10
    assert math.cos(lc.phi - phi) == pytest.approx(1.0, abs=1e-10)
    assert np.abs(np.subtract(back, (u1, u2))).max() < 1e-10


def test_level_phi_zero_branch():
    for K in (0.1, 0.5, 0.9):
        u1, u2 = level_to_uv(K, 0.0, MU)
        assert u1 == 0.0 and u2 > 0
        assert u2 == pytest.approx((1 + MU) / 2 * f_solver(math.sqrt(abs(math.log(K)) / 2)))


def test_level_degenerate_origin():
    lc = uv_to_level(0.0, 0.0, MU)
    assert lc.K == 1.0 and lc.degenerate and math.isnan(lc.phi)
    with pytest.raises(ValueError):
        level_to_uv(0.0, 0.0, MU)
    with pytest.raises(ValueError):
        uv_to_level(0.0, -10.0, MU)


@settings(max_examples=60)
@given(u1=st.floats(-1.5, 1.5), u2=st.floats(-0.4, 1.5))
def test_property_level_K_matches_first_integral(u1, u2):
    if 2 * (u2 - u1 * u1) / (1 + MU) <= -1 + 1e-6:
        return
    lc = uv_to_level(u1, u2, MU)
    K = float(first_integral_K(u1, u2, MU))
    assert lc.K == pytest.approx(K, abs=1e-10)
    if K > 0:
        assert level_log_K(u1, u2, MU) == pytest.approx(math.log(K), rel=1e-9, abs=1e-12)


# -- rotation sectors ------------------------------------------------------------------------
def test_sector_window():
    assert k_star_window(MU, None) == (math.ceil(1 / math.sqrt(MU)), None)
    low, high = k_star_window(0.0252, 4e-3)
    assert low == 7 and high == math.ceil(math.sqrt(abs(math.log(4e-3)) / 0.0252))


def test_sector_of_weak_canard_path():
    zb = np.linspace(-1, 1, 201)
    x, y = weak_canard(zb, MU)
    info = rotation_sector(FnPath(zb=zb, xb=x, yb=y, mu=MU), MU)
    assert info.halfturns == 0 and info.k == 0 and info.classification == "inner"


def test_sector_from_synthetic_focus():
    zb = np.linspace(-1, 1, 2001)
    # decaying rotation with exactly 7 sign changes of u1
    u1 = np.exp(-zb ** 2) * np.sin(3.5 * np.pi * (zb + 1) + 0.25)
    path = np.column_stack([u1 - zb, np.zeros_like(zb), zb])
    info = rotation_sector(path, MU)
    assert info.halfturns == 7 and info.k == 3


def test_sector_inner_outer_split():
    zb = np.linspace(-1, 1, 4001)
    low = k_star_window(MU, None)[0]
    for k, cls in ((low, "inner"), (low + 1, "outer")):
        u1 = np.sin((2 * k + 1) * np.pi * (zb + 1) / 2 + 0.1)
        info = rotation_sector(np.column_stack([u1 - zb, 0 * zb, zb]), MU)
        assert info.k == k and info.classification == cls
    info = rotation_sector(np.column_stack([np.sin(21 * np.pi * (zb + 1) / 2 + 0.1) - zb, 0 * zb, zb]),
                           MU, c0=3.0)
    assert info.k == 10 and info.classification == "inner"


def test_sector_from_trajectory_needs_eps():
    tr = Trajectory(times=np.zeros(3), states=np.zeros((3, 3)))
    with pytest.raises(ValueError):
        rotation_sector(tr, MU)
    assert rotation_sector(tr, MU, eps=0.01).k == 0


def test_half_turn_hysteresis():
    assert count_half_turns([1e-12, -1e-12, 1e-12, 1.0, -1.0]) == 1
    assert sector_from_half_turns(0) == 0 and sector_from_half_turns(2) == 0
    assert sector_from_half_turns(3) == 1
