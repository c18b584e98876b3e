import json
import math
import warnings

import numpy as np
import pytest
import scipy.linalg as la
from hypothesis import given, settings, strategies as st

from effmaster.dicke import DickeParams, mean_field_steady
from effmaster.errors import InvalidArgument
from effmaster.meanfield import (
    PoorFitWarning,
    couplings,
    critical_exponent_fit,
    fit_window,
    fixed_point,
    integrate_mean_field,
    mean_field_rhs,
    photon_number_from_spin,
    stability_matrix,
    write_exponent_csv,
    write_exponent_json,
)


def test_couplings_values():
    p = DickeParams(10).at(1.0)
    c = couplings(p)
    assert c.v0 == pytest.approx(p.omega0 / 2, rel=1e-12)   # threshold is 2 V0 = w0
    assert c.v1 == pytest.approx(4 * p.kappa * p.omega0 * p.g ** 2 / 4, rel=1e-12)
    assert couplings(p, dissipative=False).v1 == 0.0


@pytest.mark.parametrize("ratio", [0.3, 1.0, 1.5, 2.0, 3.0])
def test_fixed_points_are_stationary(ratio):
    p = DickeParams(40).at(ratio)
    s = fixed_point(p)
    assert np.abs(mean_field_rhs(s, p)).max() < 1e-12
    assert math.hypot(s.sx, s.sz) == pytest.approx(20.0, rel=1e-14)
    assert fixed_point(p, sign=-1).sx == -s.sx


def test_fixed_point_matches_steady_values():
    p = DickeParams(200).at(2.0)
    s = fixed_point(p)
    assert s.sz == pytest.approx(-25.0, rel=1e-12)
    assert photon_number_from_spin(s, p) == pytest.approx(18.75, rel=1e-12)
    with pytest.raises(InvalidArgument):
        fixed_point(DickeParams(4).at(0.5), branch="above")
    with pytest.raises(InvalidArgument):
        fixed_point(p, branch="sideways")


def test_uncoupled_precession():
    p = DickeParams(10, omega0=0.7)
    s0 = np.array([3.0, 0.0, -4.0])
    times, traj = integrate_mean_field(s0, p, 5.0, dt=1e-3, sample_interval=1.0)
    np.testing.assert_allclose(traj[:, 0], 3 * np.cos(0.7 * times), atol=1e-10)
    np.testing.assert_allclose(traj[:, 1], 3 * np.sin(0.7 * times), atol=1e-10)
    np.testing.assert_allclose(traj[:, 2], -4.0, atol=1e-12)


@pytest.mark.parametrize("ratio", [0.5, 2.0])
def test_spin_length_conserved(ratio):
    p = DickeParams(20).at(ratio)
    s0 = np.array([1.0, 0.5, -math.sqrt(100 - 1.25)])
    _, traj = integrate_mean_field(s0, p, 100.0, sample_interval=1.0)
    assert np.abs(np.linalg.norm(traj, axis=1) - 10.0).max() < 1e-6


@pytest.mark.parametrize("branch, ratio", [("below", 0.5), ("above", 1.6)])
def test_linear_response_follows_stability_matrix(branch, ratio):
    p = DickeParams(50).at(ratio)
    s = np.array(fixed_point(p, branch))
    st_ = stability_matrix(branch, p)
    delta = 1e-6 * np.array([1.0, -0.5, 0.0])
    # keep the perturbation on the sphere to first order
    delta[2] = -s[0] * delta[0] / s[2]
    times, traj = integrate_mean_field(s + delta, p, 60.0, sample_interval=5.0)
    for t, y in zip(times, traj):
        lin = la.expm(st_.matrix * t) @ delta
        assert np.linalg.norm(y - s - lin) < 0.02 * np.linalg.norm(delta)


def test_relaxes_to_superradiant_fixed_point():
    p = DickeParams(40).at(2.0)
    s0 = np.array([0.5, 0.0, -math.sqrt(400 - 0.25)])
    _, traj = integrate_mean_field(s0, p, 3000.0, dt=5e-2, sample_interval=3000.0)
    I0, Sz0 = mean_field_steady(p)
    assert abs(traj[-1, 2] - Sz0) < 1e-4 * p.n_atoms
    assert abs(photon_number_from_spin(traj[-1], p) - I0) < 1e-4 * p.n_atoms


def test_integrate_rejects_bad_state():
    with pytest.raises(InvalidArgument):
        integrate_mean_field([0.0, 1.0], DickeParams(4), 1.0)
    with pytest.raises(InvalidArgument):
        integrate_mean_field([0.0, np.nan, 1.0], DickeParams(4), 1.0)


@given(st.floats(0.05, 2.0), st.floats(0.2, 3.0), st.floats(0.05, 3.0), st.floats(0.05, 3.0),
       st.booleans())
@settings(max_examples=80, deadline=None)
def test_closed_form_eigenvalues(w0, wc, kappa, ratio, dissipative):
    p = DickeParams(30, w0, wc, kappa).at(ratio)
    branch = "above" if ratio > 1.0 + 1e-9 else "below"
    st_ = stability_matrix(branch, p, dissipative)
    numeric = np.linalg.eigvals(st_.matrix)
    for lam in st_.eigenvalues:
        assert np.min(np.abs(numeric - lam)) < 1e-9 * max(1.0, np.abs(st_.matrix).max())
    slow, fast = st_.eigenvalues[1:]
    assert abs(slow.real) <= abs(fast.real) + 1e-15
    assert max(slow.real, fast.real) <= 1e-12


def test_subcritical_pair_value():
    st_ = stability_matrix("below", DickeParams(10).at(0.5))
    slow = st_.eigenvalues[1]
    assert slow.real == pytest.approx(-0.00125, rel=1e-10)
    assert abs(slow.imag) == pytest.approx(0.08659352, abs=1e-8)


def test_above_branch_requires_threshold():
    with pytest.raises(InvalidArgument):
        stability_matrix("above", DickeParams(10).at(1.0))


@pytest.mark.parametrize("side", ["below", "above"])
def test_dissipative_exponent_is_linear(side):
    fit = critical_exponent_fit(DickeParams(10), side)
    assert fit.nu == pytest.approx(1.0, abs=0.05)
    assert fit.fit_residual < 0.05
    lo, hi = fit.window
    assert hi < 1e-3 and hi / lo == pytest.approx(100)


@pytest.mark.parametrize("side", ["below", "above"])
def test_closed_exponent_is_square_root(side):
    fit = critical_exponent_fit(DickeParams(10), side, dissipative=False)
    assert fit.window == (1e-3, 1e-1)
    assert fit.nu == pytest.approx(0.5, abs=0.05)


def test_exponent_scale_invariance():
    a = critical_exponent_fit(DickeParams(10), "below")
    b = critical_exponent_fit(DickeParams(10, omega0=0.2, omega_c=2.0, kappa=2.0), "below")
    assert a.nu == pytest.approx(b.nu, abs=1e-6)


def test_poor_fit_warns_on_fixed_window():
    with pytest.warns(PoorFitWarning):
        fit = critical_exponent_fit(DickeParams(10), "below", window=(1e-3, 1e-1))
    assert fit.fit_residual > 0.05


def test_exponent_argument_checks():
    p = DickeParams(10)
    with pytest.raises(InvalidArgument):
        critical_exponent_fit(p, "sideways")
    with pytest.raises(InvalidArgument):
        critical_exponent_fit(p, window=(0.1, 0.01))
    with pytest.raises(InvalidArgument):
        critical_exponent_fit(p, n_points=3)
    assert fit_window(p, "below", dissipative=False) == (1e-3, 1e-1)


def test_exponent_outputs(tmp_path):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PoorFitWarning)
        fit = critical_exponent_fit(DickeParams(10), "below", n_points=8)
    write_exponent_csv(fit, tmp_path / "e.csv", comment="c")
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[1] == "g_over_gc,re_lambda,im_lambda"
    assert len(lines) == 2 + 8
    write_exponent_json(fit, tmp_path / "e.json")
    data = json.loads((tmp_path / "e.json").read_text())
    assert data["nu"] == fit.nu and len(data["window"]) == 2
