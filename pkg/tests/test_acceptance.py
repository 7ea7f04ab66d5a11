"""End-to-end acceptance checks, numbered 1 to 8.

Each test prints a single ``[acceptance k] PASS/FAIL ...`` line straight to
the terminal (bypassing capture) before asserting.  The coded waterfall
and determinism checks take most of an hour on one core and are marked
``slow``; deselect them with ``-m "not slow"``.
"""

import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from gmumimo.allocation import group_mmse_curves, group_rates
from gmumimo.capacity import (
    NonUniqueFixedPoint,
    achievable_rate_area,
    capacity_sweep,
    constrained_capacity_closed_form,
    constrained_capacity_integral,
    omega_ax_forms,
)
from gmumimo.channel import ChannelMatrix, make_conditioned_spectrum, make_iid_gaussian_spectrum
from gmumimo.config import load_config
from gmumimo.constellation import get_constellation, posterior_mean_var
from gmumimo.detector import DetectorState, ld_step
from gmumimo.harness import ber_rows, build_users, predict_threshold, run_ber, run_se_validation, write_csv
from gmumimo.state_evolution import find_fixed_point

ROOT = Path(__file__).resolve().parents[1]
SWEEP_DB = np.linspace(0.0, 15.0, 16)


@pytest.fixture
def report(capsys):
    def emit(k, ok, detail):
        with capsys.disabled():
            print(f"\n[acceptance {k}] {'PASS' if ok else 'FAIL'}  {detail}")
    return emit


# --------------------------------------------------------------------------
# 1. Gaussian prior on a flat channel


def test_acceptance_1_gaussian_flat(report):
    g = get_constellation("gaussian")
    n = 64
    spec = make_conditioned_spectrum(n, n, 1.0)
    worst = 0.0
    for snr in (1.0, 4.0, 10.0):
        exact = n * np.log1p(snr)
        worst = max(worst,
                    abs(n * constrained_capacity_integral(spec, g, snr) - exact),
                    abs(constrained_capacity_closed_form(spec, g, snr) - exact))
    ok = worst <= 1e-3 * n
    report(1, ok, f"max |C - N log(1+snr)| = {worst:.3g} nats (limit {1e-3 * n:.3g})")
    assert ok


# --------------------------------------------------------------------------
# 2 and 3. Rate area equals constrained capacity; the two Omega_Ax forms agree


@pytest.fixture(scope="module")
def sweep_spectra():
    return {
        "iid": make_iid_gaussian_spectrum(333, 500, seed=1),
        "kappa50": make_conditioned_spectrum(333, 500, 50.0),
    }


def test_acceptance_2_rate_equals_capacity(report, qpsk, sweep_spectra):
    snrs = 10 ** (SWEEP_DB / 10)
    lines, worst = [], 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonUniqueFixedPoint)
        for name, spec in sweep_spectra.items():
            c_bar = capacity_sweep(spec, qpsk, snrs)
            r_bar = np.array([achievable_rate_area(spec, qpsk, s) for s in snrs])
            gap = np.abs(r_bar - c_bar)
            worst = max(worst, gap.max())
            bad = SWEEP_DB[gap > 2e-4]
            lines.append(f"{name}: max gap {gap.max():.3g}"
                         + (f" at {bad.tolist()} dB" if bad.size else ""))
    ok = worst <= 2e-4
    report(2, ok, "; ".join(lines))
    assert ok


def test_acceptance_3_replica_forms(report, qpsk, sweep_spectra):
    worst, count = 0.0, 0
    for spec in sweep_spectra.values():
        for db in SWEEP_DB:
            snr = 10 ** (db / 10)
            for rho, v in find_fixed_point(spec, snr, qpsk).candidates:
                a, b = omega_ax_forms(spec, snr, rho, v, qpsk)
                worst = max(worst, abs(a - b))
                count += 1
    ok = worst <= 1e-8
    report(3, ok, f"{count} fixed points, max difference {worst:.3g}")
    assert ok


# --------------------------------------------------------------------------
# 4. Genie detector tracks SE at N = 2048


def test_acceptance_4_se_tracking(report):
    cfg = load_config(ROOT / "configs" / "iid_se.toml")
    assert cfg.n == 2048 and cfg.se_seeds == 100
    rep = run_se_validation(cfg)[0]
    per_iter = max(rep.gap_r.max(), rep.gap_s.max())
    ok = per_iter <= 0.1 and rep.terminal_gap <= 0.1
    report(4, ok, f"max per-iteration gap {per_iter:.3%}, terminal vs v* {rep.terminal_gap:.3%}")
    assert ok


# --------------------------------------------------------------------------
# 5. Factored LD against dense algebra; scalar NLD against enumeration


def _dense_ld(A, y, s, v_s, snr):
    n = A.shape[1]
    W = np.linalg.inv(snr * A.conj().T @ A + np.eye(n) / v_s)
    x = W @ (snr * A.conj().T @ y + s / v_s)
    om = np.trace(W).real / n
    c_l = v_s / (v_s - om)
    return c_l * x + (1 - c_l) * s, 1 / om - 1 / v_s


def _enumerate(c, r, rho):
    d = np.abs(r[:, None] - c.symbols[None, :]) ** 2
    logw = np.log(c.probs)[None, :] - rho * d
    w = np.exp(logw - logw.max(axis=1, keepdims=True))
    w /= w.sum(axis=1, keepdims=True)
    mean = w @ c.symbols
    var = w @ np.abs(c.symbols) ** 2 - np.abs(mean) ** 2
    return mean, var


def test_acceptance_5_oracles(report):
    rng = np.random.default_rng(5)
    ld_err = 0.0
    for _ in range(1000):
        m, n = rng.integers(1, 9, 2)
        if rng.random() < 0.5:
            spec = make_iid_gaussian_spectrum(m, n, rng)
        else:
            spec = make_conditioned_spectrum(m, n, float(rng.uniform(1, 50)))
        ch = ChannelMatrix.draw(spec, rng)
        snr, v_s = 10 ** rng.uniform(-1, 2), rng.uniform(0.05, 1.0)
        y = rng.standard_normal(m) + 1j * rng.standard_normal(m)
        s = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        r, rho = ld_step(DetectorState(s, v_s), ch, y, snr)
        r0, rho0 = _dense_ld(ch.dense(), y, s, v_s, snr)
        ld_err = max(ld_err, np.max(np.abs(r - r0)), abs(rho - rho0) / rho0)

    nld_err = 0.0
    for name in ("bpsk", "qpsk", "16qam"):
        c = get_constellation(name)
        for _ in range(100):
            rho = 10 ** rng.uniform(-1, 2)
            r = c.symbols[rng.integers(0, c.size, 32)]
            r = r + (rng.standard_normal(32) + 1j * rng.standard_normal(32)) / np.sqrt(2 * rho)
            mean, var = posterior_mean_var(c, r, rho)
            m0, v0 = _enumerate(c, r, rho)
            nld_err = max(nld_err, np.max(np.abs(mean - m0)), np.max(np.abs(var - v0)))
    ok = ld_err <= 1e-10 and nld_err <= 1e-12
    report(5, ok, f"LD vs dense {ld_err:.3g} over 1000 instances, NLD vs enumeration {nld_err:.3g}")
    assert ok


# --------------------------------------------------------------------------
# 6. Group allocation properties and sum-rate invariance


def test_acceptance_6_allocation(report, qpsk):
    spec = make_conditioned_spectrum(128, 192, 50.0)
    snr = 10 ** 0.8
    fp = find_fixed_point(spec, snr, qpsk)
    rng = np.random.default_rng(6)
    _, ref = group_rates(group_mmse_curves(spec, qpsk, snr, [1.0, 1.0], fp), spec.n)
    worst_mono = worst_cap = worst_avg = worst_sum = 0.0
    for _ in range(50):
        G = int(rng.integers(2, 5))
        gam = 10 ** rng.uniform(-1.5, 1.5, G)
        cur = group_mmse_curves(spec, qpsk, snr, gam, fp)
        worst_mono = max(worst_mono, np.max(np.diff(cur.v_g, axis=1)))
        worst_cap = max(worst_cap, np.max(cur.v_g - cur.omega_s[None, :]), -np.min(cur.v_g))
        seg = cur.rho < snr
        worst_avg = max(worst_avg, np.max(np.abs(cur.v_g[:, seg].mean(axis=0) - cur.average[seg])))
        _, total = group_rates(cur, spec.n)
        worst_sum = max(worst_sum, abs(total - ref))
    ok = worst_mono <= 1e-12 and worst_cap <= 1e-12 and worst_avg <= 1e-9 and worst_sum <= 2e-4 * spec.n
    report(6, ok, f"max rise {worst_mono:.2g}, cap excess {worst_cap:.2g}, "
                  f"average error {worst_avg:.2g}, sum-rate spread {worst_sum:.3g} nats")
    assert ok


# --------------------------------------------------------------------------
# 7 and 8. Coded waterfall at threshold + 1.5 dB, and worker-count determinism


@pytest.fixture(scope="module")
def waterfall(tmp_path_factory):
    cfg = load_config(ROOT / "configs" / "qpsk_k50.toml")
    cfg = replace(cfg, code_cache=str(ROOT / cfg.code_cache))
    users = build_users(cfg)
    th = predict_threshold(cfg, users)
    cfg = replace(cfg, snr_db=[round(th.snr_db + 1.5, 6)], workers=1)
    out = tmp_path_factory.mktemp("waterfall")
    rec = run_ber(cfg, users)
    write_csv(out / "w1.csv", ber_rows(rec))
    return cfg, users, th, rec[0], out


@pytest.mark.slow
def test_acceptance_7_coded_waterfall(report, waterfall):
    cfg, _, th, rec, _ = waterfall
    ok = rec.total_bits >= 10 ** 7 and rec.ber < 1e-4
    report(7, ok, f"threshold {th.snr_db:.3f} dB, BER {rec.ber:.3g} at {rec.snr_db:.3f} dB "
                  f"over {rec.total_bits} bits ({rec.frame_errors} frame errors)")
    assert ok


@pytest.mark.slow
def test_acceptance_8_determinism(report, waterfall):
    cfg, users, _, _, out = waterfall
    for i in range(2):
        write_csv(out / f"w8_{i}.csv", ber_rows(run_ber(replace(cfg, workers=8), users)))
    ref = (out / "w1.csv").read_bytes()
    same = [(out / f"w8_{i}.csv").read_bytes() == ref for i in range(2)]
    ok = all(same)
    report(8, ok, f"8-worker runs identical to 1-worker run: {same}")
    assert ok
