import numpy as np
import pytest
from hypothesis import given, strategies as st

from gmumimo.channel import ChannelMatrix, SingularSpectrum, make_conditioned_spectrum, omega_L
from gmumimo.constellation import get_constellation, omega_S
from gmumimo.state_evolution import (
    NoFixedPointError,
    RangeError,
    find_fixed_point,
    interpolated_curve,
    ld_curve,
    nld_transfer,
    phi_L,
    se_iterate,
    se_threshold,
    transfer_chart,
    varphi_L,
)

K50 = make_conditioned_spectrum(333, 500, 50.0)


def test_phi_flat_is_snr():
    s = make_conditioned_spectrum(6, 6, 1.0)
    np.testing.assert_allclose(phi_L(s, 3.7, np.array([0.0, 0.1, 1.0, 10.0])), 3.7, rtol=1e-14)


def test_phi_two_point_hand_value():
    s = SingularSpectrum(np.sqrt([1.6, 0.4]), 2, 2)
    om = 0.5 * (1 / 2.6 + 1 / 1.4)
    assert omega_L(s, 1.0, 1.0) == pytest.approx(om, abs=1e-15)
    assert om == pytest.approx(0.5494, abs=1e-4)
    assert phi_L(s, 1.0, 1.0) == pytest.approx(1 / om - 1, abs=1e-14)
    assert phi_L(s, 1.0, 1.0) == pytest.approx(0.8200, abs=1e-4)


def test_phi_small_v_series():
    # phi_L(v) = m1 - v (m2 - m1^2) + O(v^2) with m_k = mean((snr lambda)^k)
    s = make_conditioned_spectrum(40, 30, 8.0)
    snr = 5.0
    a = snr * s.eigenvalues
    m1, m2 = a.mean(), (a**2).mean()
    for v in [1e-4, 1e-5]:
        assert phi_L(s, snr, v) == pytest.approx(m1 - v * (m2 - m1**2), abs=50 * v**2 * m2 * m1)
    assert phi_L(s, snr, 0.0) == pytest.approx(snr, rel=1e-14)


def test_phi_matches_definition():
    snr, v = 4.0, 0.3
    assert phi_L(K50, snr, v) == pytest.approx(1 / omega_L(K50, snr, 1 / v) - 1 / v, rel=1e-10)


def test_varphi_flat_convention():
    s = make_conditioned_spectrum(5, 5, 1.0)
    snr = 6.0
    assert varphi_L(s, snr, snr) == pytest.approx(1 / (snr + 1), rel=1e-14)
    # below snr the generalised inverse is v = 1 too
    assert varphi_L(s, snr, 2.0) == pytest.approx(1 / 3, rel=1e-14)


def test_varphi_round_trip():
    snr = 10.0
    v = np.geomspace(1e-6, 1.0, 50)
    rho, ld = ld_curve(K50, snr, v)
    out = varphi_L(K50, snr, rho)
    np.testing.assert_allclose(out, ld, rtol=1e-7, atol=1e-13)
    np.testing.assert_allclose(ld, omega_L(K50, snr, 1 / v), rtol=1e-12)
    # invert varphi back to the LD input variance and map forward again
    v_rec = 1 / (1 / out - rho)
    np.testing.assert_allclose(phi_L(K50, snr, v_rec), rho, rtol=1e-9)


def test_varphi_dense_parametric_sweep():
    spec = make_conditioned_spectrum(8, 12, 50.0)
    A = ChannelMatrix.draw(spec, seed=3).dense()
    snr = 5.0
    for v in [0.02, 0.2, 0.9]:
        omL = np.trace(np.linalg.inv(snr * A.conj().T @ A + np.eye(12) / v)).real / 12
        rho = 1 / omL - 1 / v
        assert varphi_L(spec, snr, rho) == pytest.approx(1 / (rho + 1 / v), rel=1e-9)


def test_varphi_range():
    with pytest.raises(RangeError):
        varphi_L(K50, 2.0, 2.5)
    with pytest.raises(RangeError):
        varphi_L(K50, 2.0, -0.1)


def test_varphi_decreasing():
    rho = np.linspace(0, 10.0, 200)
    assert np.all(np.diff(varphi_L(K50, 10.0, rho)) < 0)


def test_gaussian_flat_fixed_point():
    s = make_conditioned_spectrum(4, 4, 1.0)
    g = get_constellation("gaussian")
    fp = find_fixed_point(s, 5.0, g)
    assert fp.rho_star == pytest.approx(5.0, rel=1e-12)
    assert fp.v_star == pytest.approx(1.0, rel=1e-12)


def test_fixed_point_is_se_limit(qpsk):
    snr = 10 ** 0.8
    fp = find_fixed_point(K50, snr, qpsk)
    assert fp.unique
    rhos, vs = se_iterate(K50, snr, qpsk, max_iters=5000, tol=0.0)
    assert rhos[-1] == pytest.approx(fp.rho_star, abs=1e-9)
    assert vs[-1] == pytest.approx(fp.v_star, abs=1e-9)
    # crossing condition
    assert omega_S(qpsk, fp.rho_star) == pytest.approx(varphi_L(K50, snr, fp.rho_star), abs=1e-10)


def test_fixed_point_low_snr(qpsk):
    fp = find_fixed_point(K50, 1e-6, qpsk)
    assert fp.rho_star < 1e-5
    assert fp.v_star == pytest.approx(1.0, abs=1e-5)


def test_multiple_crossings_reported(qpsk):
    spec = make_conditioned_spectrum(128, 192, 50.0)
    fp = find_fixed_point(spec, 10 ** 1.1, qpsk)
    assert len(fp.candidates) == 3
    rhos = [r for r, _ in fp.candidates]
    assert rhos == sorted(rhos)
    assert fp.rho_star == rhos[0]


def test_no_fixed_point_raises(qpsk):
    with pytest.raises(ValueError):
        find_fixed_point(K50, 0.0, qpsk)


def test_se_monotone(qpsk):
    rhos, vs = se_iterate(K50, 10.0, qpsk, max_iters=100)
    assert np.all(np.diff(rhos) >= -1e-12)
    assert np.all(np.diff(vs) <= 1e-12)


@given(st.floats(0.0, 20.0), st.floats(1.0, 100.0), st.sampled_from(["bpsk", "qpsk", "16qam"]))
def test_se_monotone_property(snr_db, kappa, name):
    spec = make_conditioned_spectrum(20, 30, kappa)
    rhos, vs = se_iterate(spec, 10 ** (snr_db / 10), get_constellation(name), max_iters=30)
    assert np.all(np.diff(rhos) >= -1e-9 * rhos.max())
    assert np.all(np.diff(vs) <= 1e-12)
    assert np.all((vs >= 0) & (vs <= 1 + 1e-12))


def test_nld_transfer():
    assert nld_transfer(0.5, 1.0) == pytest.approx(1.0)
    assert nld_transfer(1 / (1 + 3.0), 3.0) == pytest.approx(1.0)


def test_threshold_zero_curve():
    assert se_threshold(K50, (0.5, 100.0), lambda r: np.zeros_like(np.asarray(r, float))) == 0.5


def test_threshold_uncoded_is_infinite(qpsk):
    # checked up to 20 dB: past ~23 dB Omega_S(rho*) < 1e-17 evaluates to exactly 0
    assert se_threshold(K50, (1.0, 100.0), lambda r: omega_S(qpsk, r)) == np.inf


def test_threshold_bisection_consistent():
    # a scaled Gaussian MMSE that is cut to zero at rho = 3
    curve = lambda r: np.where(np.asarray(r) < 3.0, 0.8 / (1 + np.asarray(r)), 0.0)
    th = se_threshold(K50, (0.1, 1e3), curve)
    assert 3.0 < th < 1e3
    assert se_threshold(K50, (th * 1.01, 1e3), curve) == pytest.approx(th * 1.01)
    assert se_threshold(K50, (0.1, th * 0.99), curve) == np.inf


def test_interpolated_curve_clamps():
    f = interpolated_curve([0.0, 1.0, 10.0], [1.0, 0.5, 0.1])
    assert f(0.0) == 1.0
    assert f(1.0) == pytest.approx(0.5)
    assert f(100.0) == pytest.approx(0.1)
    assert f(np.sqrt(10)) == pytest.approx(0.3)
    with pytest.raises(ValueError):
        interpolated_curve([0.0, 0.0], [1.0, 1.0])


def test_transfer_chart(qpsk):
    ch = transfer_chart(K50, 8.0, qpsk, n_points=64)
    rows = list(ch.rows())
    assert rows[0] == ("rho", "v_ld", "v_nld_S", "v_nld_C_opt")
    assert len(rows) == 66
    assert ch.rho_grid[0] == 0 and ch.rho_grid[-1] == 8.0
    assert ch.opt_curve[-1] == 0.0
    np.testing.assert_array_less(ch.opt_curve[:-1] - 1e-15, np.minimum(ch.ld_curve, ch.nld_curve)[:-1])


def test_no_crossing_reported(qpsk, monkeypatch):
    import gmumimo.state_evolution as se

    monkeypatch.setattr(se, "_crossing_gap", lambda *a: np.ones_like(np.asarray(a[-1], dtype=float)))
    with pytest.raises(NoFixedPointError, match="above"):
        find_fixed_point(make_conditioned_spectrum(8, 8, 2.0), 3.0, qpsk)
