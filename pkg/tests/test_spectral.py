import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from slq import (AsymmetryError, DimensionMismatch, ParseError, PiecewiseConstant,
                 SpectralModel, TimeGrid, library, load_scenario, make_scenario, project,
                 project_scenario, semigroup_apply)
from slq.spectral import scenario_from_dict, scenario_to_dict

from conftest import scenario_path


def test_grid_nodes_and_step():
    g = TimeGrid(0.5, 2.0, 6)
    assert g.dt == pytest.approx(0.25)
    np.testing.assert_allclose(g.nodes, np.linspace(0.5, 2.0, 7))
    assert g.refined(12).dt == pytest.approx(0.125)


@pytest.mark.parametrize("args", [(1.0, 1.0, 4), (0.0, 1.0, 0), (2.0, 1.0, 4)])
def test_grid_rejects_bad_input(args):
    with pytest.raises(Exception):
        TimeGrid(*args)


def test_make_scenario_defaults_to_zero():
    sc = make_scenario([-1.0, -4.0], T=1.0, m=10, k=1, B=[[1.0], [0.5]])
    c = sc.coeffs
    assert c.A1.shape == (11, 2, 2) and c.B.shape == (11, 2, 1)
    assert not c.Q.any() and not c.R.any() and not c.D.any()
    np.testing.assert_array_equal(c.B[3], [[1.0], [0.5]])
    np.testing.assert_array_equal(sc.eta, [0.0, 0.0])


def test_asymmetric_weight_rejected():
    with pytest.raises(AsymmetryError):
        make_scenario([0.0, 0.0], m=4, Q=[[1.0, 0.1], [0.0, 1.0]])


def test_tiny_asymmetry_symmetrized():
    sc = make_scenario([0.0, 0.0], m=4, Q=[[1.0, 0.1 + 1e-14], [0.1, 1.0]])
    np.testing.assert_array_equal(sc.coeffs.Q[0], sc.coeffs.Q[0].T)


def test_shape_mismatch_rejected():
    with pytest.raises(DimensionMismatch):
        make_scenario([0.0, 0.0], m=4, k=1, B=[[1.0, 2.0]])


@given(st.lists(st.floats(0.05, 0.95), min_size=1, max_size=4, unique=True),
       st.integers(4, 60))
def test_piecewise_constant_holds_left_value(breaks, m):
    times = np.concatenate([[0.0], np.sort(breaks)])
    values = np.arange(times.size, dtype=float)[:, None, None]
    pc = PiecewiseConstant(times, values)
    grid = TimeGrid(0.0, 1.0, m)
    s = pc.sample(grid)
    for i, t in enumerate(grid.nodes):
        expect = np.searchsorted(times, t + 1e-12, side="right") - 1
        assert s[i, 0, 0] == expect


def test_semigroup_and_projection():
    model = SpectralModel(np.array([-1.0, -4.0, -9.0]), 1.0)
    v = np.array([1.0, 2.0, 3.0])
    np.testing.assert_allclose(semigroup_apply(model, 0.5, v), np.exp(-0.5 * np.array([1, 4, 9])) * v)
    np.testing.assert_array_equal(project(model, 2, v), [1.0, 2.0, 0.0])
    with pytest.raises(IndexError):
        project(model, 4, v)


def test_project_scenario_takes_leading_blocks(heat):
    sub = project_scenario(heat, 3)
    assert sub.n == 3 and sub.k == heat.k
    np.testing.assert_array_equal(sub.coeffs.A1, heat.coeffs.A1[:, :3, :3])
    np.testing.assert_array_equal(sub.coeffs.B, heat.coeffs.B[:, :3])
    np.testing.assert_array_equal(sub.lam, heat.lam[:3])
    np.testing.assert_array_equal(sub.eta, heat.eta[:3])


def _same(a, b):
    assert a.n == b.n and a.k == b.k and a.grid == b.grid
    np.testing.assert_array_equal(a.lam, b.lam)
    np.testing.assert_array_equal(a.eta, b.eta)
    for name in ("A1", "B", "C", "D", "Q", "R", "G"):
        np.testing.assert_array_equal(getattr(a.coeffs, name), getattr(b.coeffs, name))


def test_shipped_files_match_library(heat):
    _same(load_scenario(scenario_path("heat8.toml")), heat)
    _same(load_scenario(scenario_path("classical.toml")), library.classical())
    _same(load_scenario(scenario_path("classical.json")), library.classical())
    _same(load_scenario(scenario_path("indefinite_failure.toml")), library.indefinite_failure())


def test_dict_roundtrip(heat):
    _same(scenario_from_dict(json.loads(json.dumps(scenario_to_dict(heat)))), heat)


def test_time_varying_breakpoints():
    sc = load_scenario(scenario_path("switched_actuator.toml"))
    nodes = sc.grid.nodes
    B = sc.coeffs.B[:, 0, 0]
    assert np.all(B[nodes < 0.5] == 1.0) and np.all(B[nodes >= 0.5] == 0.25)
    R = sc.coeffs.R[:, 0, 0]
    assert np.all(R[nodes < 0.75] == 0.5) and np.all(R[nodes >= 0.75] == 2.0)
    assert list(np.flatnonzero(sc.coeffs.jump_nodes())) == [200, 300]


def test_regrid_resamples_breakpoints():
    sc = load_scenario(scenario_path("switched_actuator.toml")).regrid(40)
    assert sc.grid.m == 40 and sc.coeffs.B[20, 0, 0] == 0.25 and sc.coeffs.B[19, 0, 0] == 1.0


@pytest.mark.parametrize("text, exc", [
    ("n = 1\nlambda = [0.0]\n", ParseError),
    ("n = 1\nT = 1.0\nlambda = [0.0, 1.0]\n", DimensionMismatch),
    ("n = 1\nT = 1.0\nlambda = [0.0]\n[coefficients]\nZ = [[1.0]]\n", ParseError),
    ("n = 1\nT = 1.0\nlambda = [0.0]\n[coefficients]\nQ = [[1.0, 2.0]]\n", DimensionMismatch),
    ("n = 1\nT = 1.0\nlambda = [0.0]\n[[coefficients.B]]\ntime = 0.5\nvalue = [[1.0]]\n",
     ParseError),
    ("n = 1\nT = = 1.0\n", ParseError),
])
def test_malformed_files(tmp_path, text, exc):
    f = tmp_path / "bad.toml"
    f.write_text(text)
    with pytest.raises(exc):
        load_scenario(f)


def test_diag_table_form(tmp_path):
    f = tmp_path / "d.toml"
    f.write_text("n = 2\nT = 1.0\nlambda = [-1.0, -2.0]\n[coefficients]\nQ = {diag = [1.0, 2.0]}\n")
    np.testing.assert_array_equal(load_scenario(f).coeffs.Q[0], np.diag([1.0, 2.0]))
