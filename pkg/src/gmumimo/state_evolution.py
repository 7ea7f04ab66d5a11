"""Scalar state evolution of the OAMP/VAMP receiver.

The LD is summarised by ``phi_L`` (output precision as a function of input
variance) and, after the change of variables used for area arguments, by the
curve ``v = varphi_L(rho)`` in the (rho, v) plane.  The NLD is a curve
``v = Omega(rho)``: ``omega_S`` for symbol-by-symbol demodulation, or a
(measured) coded MMSE curve.

A useful identity: on the LD curve parametrised by its input variance v,
``rho = phi_L(v)`` and ``varphi_L(rho) = Omega_L(1/v)``.  Most routines here
scan in v so no inverse of ``phi_L`` is ever needed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from .channel import SingularSpectrum
from .constellation import Constellation, omega_S

__all__ = [
    "FixedPoint",
    "NoFixedPointError",
    "RangeError",
    "TransferChart",
    "find_fixed_point",
    "interpolated_curve",
    "ld_curve",
    "nld_transfer",
    "phi_L",
    "se_iterate",
    "se_threshold",
    "transfer_chart",
    "varphi_L",
]

V_FLOOR = 1e-30


class RangeError(ValueError):
    """rho lies outside the attainable range of phi_L."""


class NoFixedPointError(RuntimeError):
    """Omega_S and varphi_L never cross."""


def _scaled_eigs(spectrum: SingularSpectrum, snr: float) -> np.ndarray:
    return snr * spectrum.eigenvalues


def phi_L(spectrum: SingularSpectrum, snr: float, v):
    """LD output precision ``[Omega_L(1/v)]^{-1} - 1/v`` for input variance v.

    Evaluated as mean(a/(1+va)) / mean(1/(1+va)) with a = snr * lambda, which
    is the same quantity without the cancellation at small v; v = 0 gives snr.
    """
    v_arr = np.asarray(v, dtype=float)
    if np.any(v_arr < 0):
        raise ValueError("v must be nonnegative")
    a = _scaled_eigs(spectrum, snr)
    den = 1.0 + v_arr[..., None] * a
    out = np.mean(a / den, axis=-1) / np.mean(1.0 / den, axis=-1)
    return float(out) if out.ndim == 0 else out


def ld_curve(spectrum: SingularSpectrum, snr: float, v):
    """Points (rho, varphi_L(rho)) of the LD curve, parametrised by v."""
    v_arr = np.asarray(v, dtype=float)
    a = _scaled_eigs(spectrum, snr)
    den = 1.0 + v_arr[..., None] * a
    inv = np.mean(1.0 / den, axis=-1)
    return np.mean(a / den, axis=-1) / inv, v_arr * inv


def varphi_L(spectrum: SingularSpectrum, snr: float, rho, tol: float = 1e-12):
    """LD curve ``(rho + 1/phi_L^inv(rho))^{-1}`` on the (rho, v) plane.

    ``phi_L`` is decreasing in v, so its generalised inverse is taken as
    ``sup{v in (0, 1] : phi_L(v) >= rho}``; below phi_L(1) this is v = 1 and
    on a flat spectrum it gives v = 1 at rho = snr.  The supremum is located
    by bisection in log v.
    """
    rho_arr = np.atleast_1d(np.asarray(rho, dtype=float))
    if np.any(rho_arr < 0) or np.any(rho_arr > snr * (1 + 1e-12)):
        raise RangeError(f"rho outside the attainable interval [0, {snr}] of phi_L")
    slack = tol * max(snr, 1.0)
    v = np.ones_like(rho_arr)
    need = phi_L(spectrum, snr, 1.0) < rho_arr - slack
    if np.any(need):
        target = rho_arr[need]
        lo = np.full(target.shape, np.log(V_FLOOR))
        hi = np.zeros(target.shape)
        reach = phi_L(spectrum, snr, V_FLOOR) >= target - slack
        for _ in range(64):
            mid = 0.5 * (lo + hi)
            ok = phi_L(spectrum, snr, np.exp(mid)) >= target - slack
            lo = np.where(ok, mid, lo)
            hi = np.where(ok, hi, mid)
        v[need] = np.where(reach, np.exp(lo), 0.0)
    out = v / (1.0 + rho_arr * v)
    return float(out[0]) if np.ndim(rho) == 0 else out


def nld_transfer(omega, rho):
    """Orthogonalised NLD output variance ``([Omega]^{-1} - rho)^{-1}``."""
    omega = np.asarray(omega, dtype=float)
    rho = np.asarray(rho, dtype=float)
    with np.errstate(divide="ignore"):
        out = 1.0 / (1.0 / omega - rho)
    return float(out) if out.ndim == 0 else out


@dataclass
class TransferChart:
    rho_grid: np.ndarray
    ld_curve: np.ndarray
    nld_curve: np.ndarray
    opt_curve: np.ndarray
    snr: float
    spectrum_id: str = ""
    constellation: str = ""

    def rows(self):
        yield ("rho", "v_ld", "v_nld_S", "v_nld_C_opt")
        for row in zip(self.rho_grid, self.ld_curve, self.nld_curve, self.opt_curve):
            yield tuple(float(x) for x in row)


def chart_grid(snr: float, n_points: int = 512) -> np.ndarray:
    """Log grid over [1e-4 snr, snr] with the exact endpoints 0 and snr."""
    grid = np.logspace(np.log10(1e-4 * snr), np.log10(snr), n_points)
    grid[-1] = snr
    return np.concatenate(([0.0], grid))


def transfer_chart(spectrum: SingularSpectrum, snr: float, c: Constellation,
                   n_points: int = 512, spectrum_id: str = "") -> TransferChart:
    grid = chart_grid(snr, n_points)
    ld = varphi_L(spectrum, snr, grid)
    nld = omega_S(c, grid)
    opt = np.where(grid < snr, np.minimum(ld, nld), 0.0)
    return TransferChart(grid, ld, nld, opt, snr, spectrum_id, c.name)


@dataclass
class FixedPoint:
    """Crossing of Omega_S and varphi_L.

    ``rho_star``/``v_star`` describe the crossing reached by iterating the SE
    from v = 1 (the smallest rho); all crossings found are in ``candidates``.
    ``v_ld`` is the LD input variance at the crossing, so that
    ``rho_star = phi_L(v_ld)``.
    """

    rho_star: float
    v_star: float
    v_ld: float
    candidates: list = field(default_factory=list)

    @property
    def unique(self) -> bool:
        return len(self.candidates) <= 1


def _crossing_gap(spectrum, snr, c, v):
    rho, ld = ld_curve(spectrum, snr, v)
    return omega_S(c, rho) - ld


def find_fixed_point(spectrum: SingularSpectrum, snr: float, c: Constellation,
                     n_grid: int = 512) -> FixedPoint:
    """Locate every crossing of Omega_S with the LD curve.

    The LD curve is scanned on a log grid of its input variance v in
    (v_min, 1]; sign changes of ``Omega_S(phi_L(v)) - Omega_L(1/v)`` bracket
    the crossings, which are then refined with Brent's method.
    """
    if snr <= 0:
        raise ValueError("snr must be positive")
    floor = omega_S(c, snr)
    if floor <= 0.0:
        # demodulation alone is already error free at this snr
        return FixedPoint(snr, 0.0, 0.0, [(snr, 0.0)])
    v_min = min(1e-12, 0.1 * floor)
    grid = np.logspace(np.log10(v_min), 0.0, n_grid)
    gap = _crossing_gap(spectrum, snr, c, grid)
    scale = max(abs(gap[-1]), 1e-300)
    roots = []
    if abs(gap[-1]) <= 1e-13:
        # the Gaussian prior meets the LD curve exactly at its starting point
        roots.append(1.0)
        gap = gap[:-1]
        grid = grid[:-1]
    sign = np.sign(gap)
    for i in np.nonzero(sign[:-1] * sign[1:] < 0)[0]:
        f = lambda lv: float(_crossing_gap(spectrum, snr, c, np.exp(lv)))
        lv = brentq(f, np.log(grid[i]), np.log(grid[i + 1]), xtol=1e-14, rtol=1e-15, maxiter=200)
        roots.append(float(np.exp(lv)))
    if not roots:
        below = bool(np.all(gap < 0))
        raise NoFixedPointError(
            f"no crossing at snr={snr}: Omega_S lies entirely "
            f"{'below' if below else 'above'} the LD curve (gap scale {scale:.3g})"
        )
    cands = []
    for v in sorted(roots, reverse=True):
        rho = phi_L(spectrum, snr, v)
        cands.append((rho, nld_transfer(omega_S(c, rho), rho), v))
    rho_star, v_star, v_ld = cands[0]
    return FixedPoint(rho_star, v_star, v_ld, [(r, vs) for r, vs, _ in cands])


def se_iterate(spectrum: SingularSpectrum, snr: float, nld: Constellation | Callable,
               max_iters: int = 100, v0: float = 1.0, tol: float = 0.0):
    """Iterate the SE recursion from input variance ``v0``.

    ``nld`` is either a constellation (uses Omega_S) or a callable rho -> MMSE.
    Returns arrays (rho_t, v_t) with v_t the NLD output variance after
    iteration t; the loop stops early once |v_t - v_{t-1}| <= tol.
    """
    mmse = (lambda r: omega_S(nld, r)) if isinstance(nld, Constellation) else nld
    rhos, vs = [], []
    v = v0
    for _ in range(max_iters):
        rho = phi_L(spectrum, snr, v)
        om = float(mmse(rho))
        v_new = nld_transfer(om, rho) if om > 0 else 0.0
        rhos.append(rho)
        vs.append(v_new)
        done = abs(v_new - v) <= tol or v_new <= 0.0
        v = v_new
        if done:
            break
    return np.array(rhos), np.array(vs)


def interpolated_curve(rho_grid, values) -> Callable:
    """Monotone piecewise-linear curve in log(rho), clamped at the grid ends."""
    rho_grid = np.asarray(rho_grid, dtype=float)
    values = np.asarray(values, dtype=float)
    if np.any(np.diff(rho_grid) <= 0):
        raise ValueError("rho grid must be strictly increasing")
    pos = rho_grid > 0
    lr = np.log(rho_grid[pos])
    vals = values[pos]
    head = values[0]

    def curve(rho):
        rho = np.asarray(rho, dtype=float)
        with np.errstate(divide="ignore"):
            out = np.interp(np.log(np.maximum(rho, 1e-300)), lr, vals)
        if not pos[0]:
            out = np.where(rho < rho_grid[pos][0],
                           np.interp(rho, rho_grid[:2], [head, vals[0]]), out)
        return float(out) if out.ndim == 0 else out

    return curve


def _tunnel_open(spectrum, snr, nld_curve, eps, n_points) -> bool:
    v = np.logspace(-14, 0, n_points)
    rho, ld = ld_curve(spectrum, snr, v)
    order = np.argsort(rho)
    rho, ld = rho[order], ld[order]
    nld = np.asarray(nld_curve(rho), dtype=float)
    # the trajectory ends where the NLD output is error free
    done = np.nonzero(nld <= 0.0)[0]
    end = done[0] if done.size else rho.size
    return bool(np.all(ld[:end] - nld[:end] >= eps))


def se_threshold(spectrum: SingularSpectrum, snr_range, nld_curve: Callable,
                 eps: float = 1e-6, n_points: int = 2000, tol_db: float = 1e-3) -> float:
    """Smallest snr in ``snr_range`` (linear) at which the decoding tunnel opens.

    Open means the NLD curve stays at least ``eps`` below the LD curve along
    the whole LD curve from its start rho = phi_L(1) up to the point where
    the NLD MMSE reaches zero.  A curve that only decays asymptotically,
    such as Omega_S of a discrete constellation, touches the LD curve at a
    fixed point and never opens.  Returns ``inf`` if the tunnel stays shut.
    """
    lo, hi = (float(s) for s in snr_range)
    if _tunnel_open(spectrum, lo, nld_curve, eps, n_points):
        return lo
    if not _tunnel_open(spectrum, hi, nld_curve, eps, n_points):
        return np.inf
    llo, lhi = np.log10(lo), np.log10(hi)
    while (lhi - llo) * 10 > tol_db:
        mid = 0.5 * (llo + lhi)
        if _tunnel_open(spectrum, 10**mid, nld_curve, eps, n_points):
            lhi = mid
        else:
            llo = mid
    return float(10**lhi)
