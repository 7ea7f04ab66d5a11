import warnings

import numpy as np
import pytest

from gmumimo.capacity import (
    ReplicaFormMismatch,
    NonUniqueFixedPoint,
    achievable_rate_area,
    capacity_report,
    capacity_sweep,
    constrained_capacity_closed_form,
    constrained_capacity_integral,
    omega_ax_forms,
    omega_Ax,
    select_crossing,
)
from gmumimo.channel import make_conditioned_spectrum
from gmumimo.constellation import get_constellation, mutual_information
from gmumimo.state_evolution import find_fixed_point

FLAT = make_conditioned_spectrum(8, 8, 1.0)
K50 = make_conditioned_spectrum(128, 192, 50.0)
GAUSS = get_constellation("gaussian")


def test_gaussian_flat_omega_ax():
    for snr in [0.5, 1.0, 10.0]:
        assert omega_Ax(FLAT, GAUSS, snr) == pytest.approx(1 / (1 + snr), rel=1e-10)


def test_omega_ax_small_snr(qpsk):
    assert omega_Ax(K50, qpsk, 1e-6) == pytest.approx(1.0, abs=1e-5)
    assert omega_Ax(K50, qpsk, 0.0) == pytest.approx(1.0, abs=1e-12)


def test_gaussian_flat_integral():
    assert constrained_capacity_integral(FLAT, GAUSS, 1.0) == pytest.approx(np.log(2), abs=1e-7)
    assert constrained_capacity_integral(FLAT, GAUSS, 0.0) == 0.0


def test_gaussian_flat_closed_form():
    for snr in [1.0, 4.0, 10.0]:
        val = constrained_capacity_closed_form(FLAT, GAUSS, snr)
        assert val == pytest.approx(8 * np.log1p(snr), rel=1e-10)
    assert constrained_capacity_closed_form(FLAT, GAUSS, 0.0) == 0.0


def test_gaussian_flat_rate_area():
    assert achievable_rate_area(FLAT, GAUSS, 4.0) == pytest.approx(np.log(5), abs=1e-8)


def test_entropy_ceiling(qpsk):
    vals = capacity_sweep(K50, qpsk, [1.0, 3.0, 6.0])
    assert np.all(np.diff(vals) > 0)
    assert np.all(vals <= np.log(4))
    high = constrained_capacity_closed_form(K50, qpsk, 10 ** 2.5) / K50.n
    assert vals[-1] < high <= np.log(4) + 1e-12
    assert high == pytest.approx(np.log(4), abs=1e-3)


@pytest.mark.parametrize("snr_db", [0.0, 4.0, 8.0])
def test_closed_form_matches_integral(qpsk, snr_db):
    snr = 10 ** (snr_db / 10)
    integral = constrained_capacity_integral(K50, qpsk, snr)
    closed = constrained_capacity_closed_form(K50, qpsk, snr)
    assert closed == pytest.approx(K50.n * integral, abs=2e-4 * K50.n)
    assert achievable_rate_area(K50, qpsk, snr) == pytest.approx(integral, abs=2e-4)


def test_sweep_matches_single_integrals(qpsk):
    snrs = [0.5, 2.0, 5.0]
    sweep = capacity_sweep(K50, qpsk, snrs)
    for s, v in zip(snrs, sweep):
        assert v == pytest.approx(constrained_capacity_integral(K50, qpsk, s), abs=1e-8)
    with pytest.raises(ValueError):
        capacity_sweep(K50, qpsk, [2.0, 1.0])


def test_rate_area_below_crossing_is_scalar_mi(qpsk):
    # at low snr the LD curve lies above Omega_S up to the fixed point, and
    # past it the area is the LD piece; check the pure-Omega_S part directly
    snr = 0.05
    fp = find_fixed_point(K50, snr, qpsk)
    area = achievable_rate_area(K50, qpsk, snr, fp)
    assert area >= mutual_information(qpsk, fp.rho_star) - 1e-12
    assert area <= mutual_information(qpsk, snr) + 1e-12


@pytest.mark.parametrize("snr_db", [2.0, 8.0, 11.0, 14.0])
def test_omega_ax_forms_agree(qpsk, snr_db):
    snr = 10 ** (snr_db / 10)
    fp = find_fixed_point(K50, snr, qpsk)
    for rho, v in fp.candidates:
        a, b = omega_ax_forms(K50, snr, rho, v, qpsk)
        assert abs(a - b) <= 1e-8


def test_form_mismatch_raised(qpsk):
    # a wildly loose grid is fine; a negative tolerance forces the check to fire
    with pytest.raises(ReplicaFormMismatch):
        omega_Ax(K50, qpsk, 3.0, atol=-1.0)


def test_branch_selection(qpsk):
    snr = 10 ** 1.1
    fp = find_fixed_point(K50, snr, qpsk)
    assert len(fp.candidates) == 3
    assert select_crossing(fp, K50, qpsk, snr, "se") == fp.candidates[0]
    assert select_crossing(fp, K50, qpsk, snr, "high") == fp.candidates[-1]
    assert select_crossing(fp, K50, qpsk, snr, "replica") in fp.candidates
    with pytest.raises(ValueError):
        select_crossing(fp, K50, qpsk, snr, "middle")
    with pytest.warns(NonUniqueFixedPoint):
        omega_Ax(K50, qpsk, snr)


def test_report(qpsk):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonUniqueFixedPoint)
        rep = capacity_report(K50, qpsk, 10 ** 0.6)
    assert rep.c_sum == pytest.approx(rep.n * rep.c_bar)
    assert rep.c_closed_form == pytest.approx(rep.c_sum, abs=2e-4 * rep.n)
    assert rep.c_bar_bits == pytest.approx(rep.c_bar / np.log(2))
    assert rep.n_crossings == 1
