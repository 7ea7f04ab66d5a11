"""Constrained sum capacity of a unitarily-invariant MIMO channel.

Three routes to the same number, all per transmit antenna and in nats:

* ``constrained_capacity_integral``: integrate the replica MMSE of Ax over
  snr (I-MMSE), one fixed-point solve per quadrature node;
* ``constrained_capacity_closed_form``: log-determinant expression at the
  fixed point (returns the sum over N antennas);
* ``achievable_rate_area``: area under min(Omega_S, varphi_L), the best
  coded-NLD curve OAMP/VAMP can track.

When the LD curve and Omega_S cross more than once the crossing used can be
chosen with ``branch``: ``"replica"`` (default; the crossing with the smallest
closed-form mutual information, i.e. the global minimiser of the replica
potential), ``"se"`` (the one reached by iterating from v = 1) or ``"high"``
(largest rho).  Only the replica branch gives a continuous mutual
information, so it is the one integrated for C_bar.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .channel import SingularSpectrum, omega_L
from .constellation import Constellation, mutual_information, omega_S
from .state_evolution import FixedPoint, find_fixed_point, varphi_L

__all__ = [
    "CapacityReport",
    "ReplicaFormMismatch",
    "achievable_rate_area",
    "capacity_report",
    "constrained_capacity_closed_form",
    "constrained_capacity_integral",
    "omega_ax_forms",
    "capacity_sweep",
    "omega_Ax",
    "select_crossing",
]

QUAD_EPS = 1e-8


class ReplicaFormMismatch(ArithmeticError):
    """The two expressions for the replica MMSE disagree."""


class NonUniqueFixedPoint(UserWarning):
    pass


def _omega_S_integral(c: Constellation, upper: float) -> float:
    # int_0^rho Omega_S is the scalar-channel mutual information (I-MMSE)
    return float(mutual_information(c, upper)) if upper > 0 else 0.0


def _logdet_term(spectrum: SingularSpectrum, snr: float, v: float) -> float:
    """(1/N) log|v^{-1} I + snr A^H A| written as -log v + mean log(1 + v snr lambda)."""
    return float(-np.log(v) + np.mean(np.log1p(v * snr * spectrum.eigenvalues)))


def _closed_form_at(spectrum, c, snr, rho, v) -> float:
    if v <= 0:
        return float(np.log(c.size)) if not c.is_gaussian else np.inf
    return _logdet_term(spectrum, snr, v) + np.log(omega_S(c, rho)) + _omega_S_integral(c, rho)


def select_crossing(fp: FixedPoint, spectrum, c, snr, branch: str = "replica") -> tuple[float, float]:
    """Pick one (rho, v) crossing from a possibly non-unique fixed point."""
    if branch == "se" or fp.unique:
        return fp.rho_star, fp.v_star
    if branch == "high":
        return fp.candidates[-1]
    if branch == "replica":
        vals = [_closed_form_at(spectrum, c, snr, r, v) for r, v in fp.candidates]
        return fp.candidates[int(np.argmin(vals))]
    raise ValueError(f"unknown branch {branch!r}")


def omega_ax_forms(spectrum: SingularSpectrum, snr: float, rho: float, v: float,
                 c: Constellation) -> tuple[float, float]:
    """Both replica-MMSE expressions at a crossing (rho, v).

    Returns ``(rho Omega_S(rho) / snr, (1 - Omega_L(1/v) / v) / snr)``.
    """
    first = rho * omega_S(c, rho) / snr
    if v <= 0:
        return first, 0.0
    second = (1.0 - omega_L(spectrum, snr, 1.0 / v) / v) / snr
    return first, second


def omega_Ax(spectrum: SingularSpectrum, c: Constellation, snr: float,
             branch: str = "replica", n_grid: int = 512, atol: float = 1e-8) -> float:
    """Replica MMSE of Ax per transmit antenna at ``snr``.

    Raises ReplicaFormMismatch if the two closed forms differ by more than ``atol``.
    """
    if snr <= 0:
        return 1.0 if c.is_gaussian else float(omega_S(c, 0.0))
    fp = find_fixed_point(spectrum, snr, c, n_grid=n_grid)
    if not fp.unique:
        warnings.warn(f"{len(fp.candidates)} crossings at snr={snr:.6g}", NonUniqueFixedPoint)
    rho, v = select_crossing(fp, spectrum, c, snr, branch)
    first, second = omega_ax_forms(spectrum, snr, rho, v, c)
    if abs(first - second) > atol:
        raise ReplicaFormMismatch(f"replica MMSE forms differ by {abs(first - second):.3g} at snr={snr}")
    return first


def constrained_capacity_integral(spectrum: SingularSpectrum, c: Constellation, snr: float,
                                  branch: str = "replica", n_grid: int = 128,
                                  epsabs: float = 1e-7) -> float:
    """Average constrained capacity C_bar = int_0^snr Omega_Ax(s) ds (nats/antenna)."""
    if snr <= 0:
        return 0.0

    def f(s):
        try:
            return omega_Ax(spectrum, c, s, branch=branch, n_grid=n_grid)
        except Exception as exc:  # name the failing node
            raise RuntimeError(f"fixed-point failure at quadrature node snr={s:.6g}: {exc}") from exc

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonUniqueFixedPoint)
        val, _ = quad(f, 0.0, snr, epsabs=epsabs, epsrel=1e-10, limit=200)
    return val


def capacity_sweep(spectrum: SingularSpectrum, c: Constellation, snrs,
                   branch: str = "replica", n_grid: int = 128,
                   epsabs: float = 1e-7) -> np.ndarray:
    """C_bar at every snr in ``snrs`` (increasing), integrating interval by interval."""
    snrs = np.asarray(snrs, dtype=float)
    if np.any(np.diff(snrs) <= 0) or np.any(snrs < 0):
        raise ValueError("snr grid must be nonnegative and strictly increasing")

    def f(s):
        try:
            return omega_Ax(spectrum, c, s, branch=branch, n_grid=n_grid)
        except Exception as exc:
            raise RuntimeError(f"fixed-point failure at quadrature node snr={s:.6g}: {exc}") from exc

    out = np.empty_like(snrs)
    acc, prev = 0.0, 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonUniqueFixedPoint)
        for i, s in enumerate(snrs):
            if s > prev:
                val, _ = quad(f, prev, s, epsabs=epsabs, epsrel=1e-10, limit=200)
                acc += val
            out[i] = acc
            prev = s
    return out


def constrained_capacity_closed_form(spectrum: SingularSpectrum, c: Constellation, snr: float,
                                     branch: str = "replica", fixed_point: FixedPoint | None = None) -> float:
    """Constrained sum capacity C_sum (nats) from the log-determinant formula."""
    if snr <= 0:
        return 0.0
    fp = fixed_point or find_fixed_point(spectrum, snr, c)
    rho, v = select_crossing(fp, spectrum, c, snr, branch)
    return spectrum.n * _closed_form_at(spectrum, c, snr, rho, v)


def achievable_rate_area(spectrum: SingularSpectrum, c: Constellation, snr: float,
                         fixed_point: FixedPoint | None = None) -> float:
    """R_bar = int_0^snr min(Omega_S, varphi_L) d rho (nats/antenna).

    The integral is split at every crossing of the two curves so that each
    piece is smooth.
    """
    if snr <= 0:
        return 0.0
    fp = fixed_point or find_fixed_point(spectrum, snr, c)
    cuts = sorted({0.0, snr, *(r for r, _ in fp.candidates if 0 < r < snr)})

    def integrand(r):
        return min(float(omega_S(c, r)), float(varphi_L(spectrum, snr, r)))

    total = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        val, _ = quad(integrand, a, b, epsabs=QUAD_EPS * 1e-1, epsrel=1e-11, limit=400)
        total += val
    return total


@dataclass
class CapacityReport:
    snr: float
    n: int
    c_bar: float
    c_sum: float
    c_closed_form: float
    r_bar_oamp: float
    rho_star: float
    v_star: float
    n_crossings: int

    @property
    def c_bar_bits(self) -> float:
        return self.c_bar / np.log(2)


def capacity_report(spectrum: SingularSpectrum, c: Constellation, snr: float,
                    branch: str = "replica") -> CapacityReport:
    fp = find_fixed_point(spectrum, snr, c)
    rho, v = select_crossing(fp, spectrum, c, snr, branch)
    c_bar = constrained_capacity_integral(spectrum, c, snr, branch=branch)
    return CapacityReport(
        snr=snr,
        n=spectrum.n,
        c_bar=c_bar,
        c_sum=spectrum.n * c_bar,
        c_closed_form=constrained_capacity_closed_form(spectrum, c, snr, branch, fp),
        r_bar_oamp=achievable_rate_area(spectrum, c, snr, fp),
        rho_star=rho,
        v_star=v,
        n_crossings=len(fp.candidates),
    )
