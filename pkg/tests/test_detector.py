import numpy as np
import pytest

from gmumimo.channel import ChannelMatrix, make_conditioned_spectrum, make_iid_gaussian_spectrum
from gmumimo.coding import build_regular, passthrough_code
from gmumimo.constellation import get_constellation, omega_S
from gmumimo.detector import (
    DetectorConfig,
    DetectorState,
    NonContracting,
    Trajectory,
    UserCode,
    ld_step,
    nld_coded_step,
    nld_uncoded_step,
    residual_variance,
    run,
)
from gmumimo.state_evolution import find_fixed_point, se_iterate


def dense_ld(A, y, s, v_s, snr):
    """LMMSE with prior (s, v_s I) and its orthogonalised output, by dense algebra."""
    n = A.shape[1]
    W = np.linalg.inv(snr * A.conj().T @ A + np.eye(n) / v_s)
    x = W @ (snr * A.conj().T @ y + s / v_s)
    om = np.trace(W).real / n
    c_l = v_s / (v_s - om)
    return c_l * x + (1 - c_l) * s, 1 / om - 1 / v_s


def _symbols(c, shape, rng):
    return c.symbols[rng.integers(0, c.size, shape)]


def test_identity_channel_ld():
    spec = make_conditioned_spectrum(5, 5, 1.0)
    ch = ChannelMatrix(None, np.eye(5, dtype=complex), spec)
    y = np.arange(5) + 1j
    snr = 3.0
    r, rho = ld_step(DetectorState.initial(5), ch, y, snr)
    assert rho == pytest.approx(snr)
    # f_lmmse = snr y / (snr + 1); orthogonalising from s = 0 scales it back to y
    np.testing.assert_allclose(r, y, atol=1e-12)


@pytest.mark.parametrize("m,n", [(2, 2), (3, 5), (6, 4)])
def test_ld_matches_dense(m, n, rng):
    spec = make_iid_gaussian_spectrum(m, n, rng)
    ch = ChannelMatrix.draw(spec, rng)
    A = ch.dense()
    y = rng.standard_normal(m) + 1j * rng.standard_normal(m)
    s = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    st = DetectorState(s, 0.4)
    r, rho = ld_step(st, ch, y, 2.5)
    r0, rho0 = dense_ld(A, y, s, 0.4, 2.5)
    np.testing.assert_allclose(r, r0, atol=1e-10)
    assert rho == pytest.approx(rho0, rel=1e-10)


def test_ld_block_columns_independent(rng):
    spec = make_conditioned_spectrum(6, 8, 5.0)
    ch = ChannelMatrix.draw(spec, rng)
    y = rng.standard_normal((6, 3)) + 0j
    s = rng.standard_normal((8, 3)) + 0j
    r, _ = ld_step(DetectorState(s, 0.7), ch, y, 2.0)
    for j in range(3):
        rj, _ = ld_step(DetectorState(s[:, j], 0.7), ch, y[:, j], 2.0)
        np.testing.assert_allclose(r[:, j], rj, atol=1e-12)


def test_nld_qpsk_enumeration(qpsk):
    r, rho = np.array([0.3 + 0.1j]), 2.0
    w = np.exp(-rho * np.abs(r[0] - qpsk.symbols) ** 2)
    w /= w.sum()
    mean = w @ qpsk.symbols
    om = omega_S(qpsk, rho)
    c_c = (1 / rho) / (1 / rho - om)
    s, v_s, omega = nld_uncoded_step(r, rho, qpsk)
    assert abs(s[0] - (c_c * mean + (1 - c_c) * r[0])) < 1e-12
    assert v_s == pytest.approx(1 / (1 / om - rho), rel=1e-12)
    assert omega == pytest.approx(om)


def test_nld_gaussian_is_uninformative():
    g = get_constellation("gaussian")
    r = np.array([0.4 - 0.2j, 1.5 + 0j])
    s, v_s, _ = nld_uncoded_step(r, 3.0, g)
    np.testing.assert_allclose(s, 0, atol=1e-12)
    assert v_s == pytest.approx(1.0)


def test_nld_high_rho(qpsk, rng):
    x = _symbols(qpsk, 50, rng)
    s, v_s, _ = nld_uncoded_step(x + 1e-4 * rng.standard_normal(50), 1e5, qpsk)
    np.testing.assert_allclose(s, x, atol=1e-3)
    assert v_s < 1e-6


def test_nld_rejects_bad_rho(qpsk):
    with pytest.raises(ValueError):
        nld_uncoded_step(np.zeros(3), 0.0, qpsk)


def test_non_contracting_raises(qpsk):
    from gmumimo.detector import _orthogonalise

    with pytest.raises(NonContracting):
        _orthogonalise(np.zeros(2), 1.0, np.zeros(2), 1.0, 1e-12)


def test_rate_one_code_matches_uncoded(qpsk, rng):
    n, L = 8, 5
    users = [UserCode(np.arange(4), passthrough_code(40)), UserCode(np.arange(4, 8), passthrough_code(40), 1)]
    r = _symbols(qpsk, (n, L), rng) + 0.5 * (rng.standard_normal((n, L)) + 1j * rng.standard_normal((n, L)))
    s1, v1, _ = nld_uncoded_step(r, 2.0, qpsk, variance="empirical")
    s2, v2, om_g, res = nld_coded_step(r, 2.0, qpsk, users)
    np.testing.assert_allclose(s2, s1, atol=1e-12)
    assert v2 == pytest.approx(v1, abs=1e-12)
    assert len(res) == 2 and om_g.shape == (2,)


def test_user_gather_scatter_round_trip(rng):
    u = UserCode(np.array([1, 3, 4]), passthrough_code(6))
    x = rng.standard_normal((6, 2))
    out = np.zeros_like(x)
    u.scatter(out, u.gather(x))
    np.testing.assert_array_equal(out[[1, 3, 4]], x[[1, 3, 4]])
    # first channel use first
    np.testing.assert_array_equal(u.gather(x)[:3], x[[1, 3, 4], 0])


def test_coded_noiseless(qpsk, rng):
    code = build_regular(96, 3, 6, seed=0)
    users = [UserCode(np.arange(16), code)]
    cw = code.encode(rng.integers(0, 2, code.k, dtype=np.uint8))
    x = np.zeros((16, 3), complex)
    users[0].scatter(x, qpsk.modulate(cw))
    s, v_s, _, res = nld_coded_step(x, 1e4, qpsk, users)
    assert res[0].converged
    np.testing.assert_allclose(s, x, atol=1e-9)
    assert v_s < 1e-9


def test_coded_step_needs_block(qpsk):
    with pytest.raises(ValueError):
        nld_coded_step(np.zeros(4, complex), 1.0, qpsk, [])


def test_residual_variance(rng):
    spec = make_iid_gaussian_spectrum(300, 400, rng)
    ch = ChannelMatrix.draw(spec, rng, left=False)
    x = rng.standard_normal((400, 4)) + 1j * rng.standard_normal((400, 4))
    err = 0.3 * (rng.standard_normal((400, 4)) + 1j * rng.standard_normal((400, 4))) / np.sqrt(2)
    snr = 20.0
    y = ch.apply(x) + (rng.standard_normal((300, 4)) + 1j * rng.standard_normal((300, 4))) / np.sqrt(2 * snr)
    assert residual_variance(x + err, ch, y, snr) == pytest.approx(0.09, rel=0.1)
    assert residual_variance(x, ch, y, snr, floor=1e-3) >= 1e-3


def test_high_snr_uncoded_converges_fast(qpsk, rng):
    spec = make_conditioned_spectrum(32, 32, 2.0)
    ch = ChannelMatrix.draw(spec, rng)
    x = _symbols(qpsk, 32, rng)
    y = ch.apply(x) + 1e-4 * (rng.standard_normal(32) + 1j * rng.standard_normal(32))
    res = run(y, ch, 1e8, qpsk, "uncoded")
    assert res.iterations <= 3
    np.testing.assert_array_equal(res.x_hat, x)


def test_trajectory_rows():
    t = Trajectory()
    t.append(1, 2.0, 0.5)
    assert list(t.rows()) == [("iter", "rho", "v"), (1, 2.0, 0.5)]
    t2 = Trajectory()
    t2.append(1, 2.0, 0.5, 0.4, 0.3)
    assert list(t2.rows())[0] == ("iter", "rho", "v", "mse_r", "mse_s")


def test_config_validation():
    with pytest.raises(ValueError):
        DetectorConfig(damping=0.0)
    with pytest.raises(ValueError):
        DetectorConfig(variance="guess")
    with pytest.raises(ValueError):
        DetectorConfig(max_iters=0)


def test_run_input_checks(qpsk, rng):
    ch = ChannelMatrix.draw(make_conditioned_spectrum(4, 6, 2.0), rng)
    with pytest.raises(ValueError):
        run(np.zeros(5), ch, 1.0, qpsk)
    with pytest.raises(ValueError):
        run(np.zeros(4), ch, 1.0, qpsk, mode="coded")
    with pytest.raises(ValueError):
        run(np.zeros(4), ch, 1.0, qpsk, mode="magic")


@pytest.fixture(scope="module")
def genie_2048(qpsk):
    rng = np.random.default_rng(2048)
    spec = make_iid_gaussian_spectrum(1365, 2048, rng)
    ch = ChannelMatrix.draw(spec, rng, left=False)
    x = _symbols(qpsk, 2048, rng)
    snr = 10 ** 0.6
    y = ch.apply(x) + (rng.standard_normal(1365) + 1j * rng.standard_normal(1365)) / np.sqrt(2 * snr)
    return spec, ch, x, y, snr


def test_genie_precision_tracks_rho(qpsk, genie_2048):
    spec, ch, x, y, snr = genie_2048
    res = run(y, ch, snr, qpsk, "uncoded", DetectorConfig(max_iters=8, tol=-1), x_true=x)
    tr = res.trajectory
    np.testing.assert_allclose(1 / np.array(tr.mse_r), tr.rho, rtol=0.05)
    rhos, vs = se_iterate(spec, snr, qpsk, max_iters=8)
    np.testing.assert_allclose(tr.rho, rhos, rtol=0.05)


def test_orthogonality(qpsk, genie_2048):
    # error correlations pooled over 8 channel realisations, first 3 cycles:
    # (r - x, s - x) across the NLD and (s - x, r' - x) across the next LD
    spec, _, _, _, snr = genie_2048
    rng = np.random.default_rng(7)
    dots = np.zeros((3, 2), complex)
    norms = np.zeros((3, 2, 2))
    for _ in range(8):
        ch = ChannelMatrix.draw(spec, rng, left=False)
        x = _symbols(qpsk, 2048, rng)
        y = ch.apply(x) + (rng.standard_normal(1365) + 1j * rng.standard_normal(1365)) / np.sqrt(2 * snr)
        st = DetectorState.initial(2048)
        for t in range(3):
            r, rho = ld_step(st, ch, y, snr)
            s, v_s, _ = nld_uncoded_step(r, rho, qpsk)
            r_next, _ = ld_step(DetectorState(s, v_s), ch, y, snr)
            for k, (a, b) in enumerate(((r - x, s - x), (s - x, r_next - x))):
                dots[t, k] += np.vdot(a, b)
                norms[t, k] += np.vdot(a, a).real, np.vdot(b, b).real
            st = DetectorState(s, v_s)
    corr = np.abs(dots) / np.sqrt(norms[..., 0] * norms[..., 1])
    assert np.all(corr <= 0.05)


def test_k50_final_mse_matches_fixed_point(qpsk):
    spec = make_conditioned_spectrum(128, 192, 50.0)
    snr = 10 ** 0.8
    fp = find_fixed_point(spec, snr, qpsk)
    rng = np.random.default_rng(50)
    cfg = DetectorConfig(max_iters=30, tol=-1)
    final = []
    for _ in range(200):
        ch = ChannelMatrix.draw(spec, rng, left=False)
        x = _symbols(qpsk, 192, rng)
        y = ch.apply(x) + (rng.standard_normal(128) + 1j * rng.standard_normal(128)) / np.sqrt(2 * snr)
        final.append(run(y, ch, snr, qpsk, "uncoded", cfg, x_true=x).trajectory.mse_s[-1])
    assert np.mean(final) == pytest.approx(fp.v_star, rel=0.1)
