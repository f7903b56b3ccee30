import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mmo_lab.koper import (DEFAULT_M, KoperParams, NoiseMatrix, check_assumptions, classify_matrix,
                           critical_manifold, fast_linearization, fold_lines, folded_node,
                           folded_singularities, koper_model, load_params, params_document,
                           secondary_canard_count, slow_flow, slow_flow_matrix, symmetric_params,
                           symmetry_map)
from mmo_lab.sde_core import SolverConfig, integrate_det


def node_ratio(k, lam):
    """Independent closed form: roots of r^2 - k r - 6(2 + k - lam) = 0."""
    c = -6.0 * (2.0 + k - lam)
    disc = math.sqrt(k * k - 4 * c)
    r1, r2 = (k + disc) / 2, (k - disc) / 2
    return min(abs(r1), abs(r2)) / max(abs(r1), abs(r2))


# -- field -----------------------------------------------------------------------
def test_fast_field_vanishes_on_critical_manifold(base_model):
    x = np.linspace(-3, 3, 1000)
    z = np.linspace(-15, 5, 1000)
    f = base_model.components(np.array([x, critical_manifold(x), z]))[0]
    assert np.abs(f).max() <= 1e-12


def test_slow_field_value(base_model):
    g1 = base_model.components(np.array([-2.0, -2.0, 0.0]))[1]
    assert g1 == 38.0


def test_eps2_is_a_free_parameter():
    m = koper_model(KoperParams(eps2=0.7))
    g2 = m.components(np.array([0.0, 1.0, 2.0]))[2]
    assert g2 == pytest.approx(0.7 * (-7.0 + 1.0 - 2.0))
    with pytest.raises(ValueError):
        KoperParams(eps2=0.0)
    with pytest.raises(ValueError):
        KoperParams(eps1=-1.0)


def test_noise_rows_from_matrix(base_model):
    assert np.array_equal(base_model.diffusion, DEFAULT_M)
    assert NoiseMatrix.default().is_default
    assert not NoiseMatrix(np.eye(3)).is_default
    with pytest.raises(ValueError):
        NoiseMatrix(np.eye(2))
    m = koper_model(KoperParams(), M=NoiseMatrix(2 * np.eye(3)))
    assert np.array_equal(m.diffusion, 2 * np.eye(3))


def test_field_is_odd_under_reflection(base_params, rng):
    X = rng.normal(size=(3, 500)) * np.array([[2.0], [3.0], [8.0]])
    a = koper_model(base_params).components(X)
    b = koper_model(symmetric_params(base_params)).components(symmetry_map(X))
    assert np.allclose(b, -a, rtol=0, atol=1e-12)


def test_symmetry_conjugates_trajectories(base_params):
    cfg = SolverConfig(dt=5e-4, t_max=2.0)
    X0 = np.array([0.5, -2.1, -8.0])
    a = integrate_det(koper_model(base_params), X0, cfg)
    b = integrate_det(koper_model(symmetric_params(base_params)), symmetry_map(X0), cfg)
    assert np.abs(b.states + a.states).max() <= 1e-8


# -- critical manifold --------------------------------------------------------------
def test_critical_manifold_values():
    assert critical_manifold(1.0) == -2.0
    assert critical_manifold(-1.0) == 2.0
    assert critical_manifold(0.0) == 0.0
    assert fold_lines() == ((1.0, -2.0), (-1.0, 2.0))


def test_branch_stability():
    outer = np.concatenate([np.linspace(-3, -1.001, 50), np.linspace(1.001, 3, 50)])
    inner = np.linspace(-0.999, 0.999, 50)
    assert np.all(fast_linearization(outer) < 0)
    assert np.all(fast_linearization(inner) > 0)
    assert fast_linearization(1.0) == 0.0


# -- slow flow --------------------------------------------------------------------
@pytest.mark.parametrize("lam", [-7.0, -7.6, -5.0, 3.0])
def test_slow_flow_vanishes_at_folded_singularities(lam):
    p = KoperParams(lam=lam)
    for x, z in ((1.0, 2 * lam - 4 - p.k), (-1.0, 2 * lam + 4 + p.k)):
        dx, dz = slow_flow(p, x, z)
        assert abs(dx) < 1e-12 and abs(dz) < 1e-12


def test_slow_flow_value_at_origin(base_params):
    dx, dz = slow_flow(base_params, 0.0, 0.0)
    assert (float(dx), float(dz)) == (14.0, 21.0)


def test_slow_flow_time_reversed_on_repelling_branch(base_params):
    # the desingularizing factor 3x^2 - 3 = -df/dx flips sign on |x| < 1
    for x in (-0.5, 0.0, 0.7):
        z = -3.0
        dz = slow_flow(base_params, x, z)[1]
        reduced = base_params.lam + critical_manifold(x) - z
        assert np.sign(dz) == -np.sign(reduced)
        assert fast_linearization(x) > 0
    dz = slow_flow(base_params, 2.0, -3.0)[1]
    assert np.sign(dz) == np.sign(base_params.lam + critical_manifold(2.0) + 3.0)
    dz2 = slow_flow(base_params.with_(eps2=0.7), 2.0, -3.0, scale_eps2=True)[1]
    assert dz2 == pytest.approx(0.7 * dz)


# -- folded singularities ----------------------------------------------------------
def test_folded_node_at_sector_parameters(sector_params):
    fn = folded_node(sector_params)
    assert fn.location == (1.0, -9.2) or np.allclose(fn.location, (1.0, -9.2), atol=1e-14)
    assert fn.mu == pytest.approx(0.02523, abs=1e-4)
    assert fn.mu == pytest.approx(node_ratio(-10.0, -7.6), rel=1e-12)
    assert fn.k_mu == 19
    strong, weak = fn.eigenvalues
    assert strong < weak < 0


def test_folded_node_base_parameters(base_params):
    fn = folded_node(base_params)
    assert fn.mu == pytest.approx(0.06850, abs=5e-5)
    assert fn.k_mu == 6
    lo, hi = sorted(fn.eigenvalues)
    assert lo == pytest.approx((-10 - math.sqrt(76)) / 2, rel=1e-12)
    assert hi == pytest.approx((-10 + math.sqrt(76)) / 2, rel=1e-12)
    assert 2 * fn.k_mu + 1 < 1 / fn.mu < 2 * fn.k_mu + 3


def test_both_singularities_reported(base_params):
    fs = folded_singularities(base_params)
    assert [f.fold for f in fs] == ["L+", "L-"]
    assert fs[1].location == (-1.0, 2 * base_params.lam + 4 + base_params.k)


def test_focus_has_no_ratio():
    p = KoperParams(k=-1.0, lam=10.0)
    fs = folded_singularities(p)[0]
    assert fs.kind == "focus" and fs.mu is None and fs.k_mu is None
    with pytest.raises(ValueError):
        folded_node(p)


def test_saddle_classification():
    kind, ev, mu = classify_matrix(np.array([[1.0, 0.0], [0.0, -2.0]]))
    assert kind == "saddle" and mu is None


def test_boundary_flag_on_odd_reciprocal():
    k, edge = secondary_canard_count(1 / 5)
    assert edge
    k, edge = secondary_canard_count(1 / 5.5)
    assert k == 2 and not edge


@given(scale=st.floats(0.1, 100.0), lam=st.floats(-7.9, -6.1))
def test_property_ratio_invariant_under_scaling(scale, lam):
    A = slow_flow_matrix(KoperParams(lam=lam))
    k1, _, mu1 = classify_matrix(A)
    k2, _, mu2 = classify_matrix(scale * A)
    assert k1 == k2 == "node"
    assert mu2 == pytest.approx(mu1, rel=1e-10)


def test_canard_count_increases_as_ratio_shrinks():
    lams = np.linspace(-6.2, -7.95, 60)
    rows = [folded_node(KoperParams(lam=float(l))) for l in lams]
    mus = [r.mu for r in rows]
    ks = [r.k_mu for r in rows]
    assert np.all(np.diff(mus) < 0)
    assert np.all(np.diff(ks) >= 0) and ks[-1] > ks[0]


# -- assumptions -----------------------------------------------------------------
def test_assumption_report(base_params):
    rep = check_assumptions(base_params, orbit_time=3.0)
    assert rep.switching_failure_residual == 0.0
    assert rep.fold_curvature == (-6.0, 6.0)
    assert rep.min_hyperbolicity > 0
    assert rep.transversality_min is not None and rep.transversality_min > 0
    # g1 on L- at z = 0
    g1 = koper_model(base_params).components(np.array([-1.0, 2.0, 0.0]))[1]
    assert g1 == 20.0
    assert rep.normal_switching_min >= 0


def test_switching_failure_identity():
    for k, lam in ((-10.0, -7.0), (-10.0, -7.6), (-3.0, 2.0)):
        p = KoperParams(k=k, lam=lam)
        g1 = koper_model(p).components(np.array([1.0, -2.0, 2 * lam - 4 - k]))[1]
        assert g1 == 0.0


def test_assumption_violation_reported():
    # the L- switching zero z = 2 lam + 4 + k moved into the box
    rep = check_assumptions(KoperParams(k=-10.0, lam=-1.0))
    assert not rep.ok
    assert any("switching" in v for v in rep.violations)


# -- parameter files ---------------------------------------------------------------
def test_parameter_file_roundtrip(tmp_path):
    p = KoperParams(k=-10.0, lam=-7.6, eps1=0.01, eps2=0.7)
    M = NoiseMatrix(np.arange(9.0).reshape(3, 3))
    path = tmp_path / "params.json"
    path.write_text(json.dumps(params_document(p, M)))
    q, M2 = load_params(path)
    assert q == p
    assert np.array_equal(M2.M, M.M)
    doc = json.loads(path.read_text())
    assert set(doc) == {"k", "lambda", "eps1", "eps2", "M"}
