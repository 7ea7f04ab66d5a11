"""Per-group MMSE targets and rates for group-asymmetric multi-user codes.

Groups share the optimal coded-NLD curve ``Omega_C* = min(Omega_S, varphi_L)``
on average.  Past the fixed point the average variance ``v`` is split with a
weight ``gamma_g`` per group through

    gamma_i (1/v_i - c*) = gamma_g (1/v_g - c*),    c* = 1 / Omega_S(rho*),

i.e. ``v_g = 1 / (c* + t / gamma_g)`` for a common ``t >= 0``.  A larger
``gamma_g`` gives the group a larger MMSE target and, since a group's rate is
the area under its curve, a higher rate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import SingularSpectrum
from .constellation import Constellation, omega_S
from .state_evolution import FixedPoint, find_fixed_point, varphi_L

__all__ = [
    "AllocationConfig",
    "GroupCurves",
    "InfeasibleAllocation",
    "RateMismatch",
    "RateTable",
    "fit_gammas",
    "group_mmse_curves",
    "group_rates",
    "omega_C_star",
    "rate_table",
    "solve_group_variances",
]

BISECT_ITERS = 200


class InfeasibleAllocation(ValueError):
    pass


class RateMismatch(ArithmeticError):
    """Group rates do not average to the area under Omega_C*."""


@dataclass
class AllocationConfig:
    gammas: np.ndarray
    c_star: float

    def __post_init__(self):
        self.gammas = np.atleast_1d(np.asarray(self.gammas, dtype=float))
        if self.gammas.ndim != 1 or self.gammas.size < 1:
            raise ValueError("gammas must be a non-empty 1-d sequence")
        if np.any(~np.isfinite(self.gammas)) or np.any(self.gammas <= 0):
            raise ValueError(f"every gamma must be positive and finite, got {self.gammas}")
        if not self.c_star >= 1.0:
            # c* = 1/Omega_S(rho*) and Omega_S <= 1 for unit-energy inputs
            raise ValueError(f"c_star must be >= 1, got {self.c_star}")

    @property
    def G(self) -> int:
        return self.gammas.size

    @property
    def b(self) -> np.ndarray:
        """b[i, g] = gamma_g / gamma_i."""
        return self.gammas[None, :] / self.gammas[:, None]

    @property
    def c(self) -> np.ndarray:
        """c[i, g] = (1 - b[i, g]) c*."""
        return (1.0 - self.b) * self.c_star

    def from_base(self, v_g, g: int) -> np.ndarray:
        """All group variances given group g's variance."""
        return 1.0 / (self.b[:, g] / v_g + self.c[:, g])


def omega_C_star(spectrum: SingularSpectrum, c: Constellation, snr: float, rho):
    """Optimal coded-NLD MMSE: min(Omega_S, varphi_L) below snr, zero from snr on."""
    rho_arr = np.atleast_1d(np.asarray(rho, dtype=float))
    if np.any(rho_arr < 0):
        raise ValueError("rho must be nonnegative")
    out = np.zeros_like(rho_arr)
    below = rho_arr < snr
    if np.any(below):
        r = rho_arr[below]
        out[below] = np.minimum(omega_S(c, r), varphi_L(spectrum, snr, r))
    return float(out[0]) if np.ndim(rho) == 0 else out


def _solve_t(gammas, c_star, v, cap):
    """Common t solving mean_g min(1/(c* + t/gamma_g), cap) = v, vectorised over v.

    The left side is continuous and strictly decreasing in t from
    min(1/c*, cap) down to 0, so bisection on log t always converges when
    0 < v < min(1/c*, cap).
    """
    v = np.asarray(v, dtype=float)
    cap = np.broadcast_to(np.asarray(cap, dtype=float), v.shape)
    g = gammas.reshape((-1,) + (1,) * v.ndim)

    def mean_v(t):
        return np.mean(np.minimum(1.0 / (c_star + t / g), cap), axis=0)

    lo = np.full(v.shape, -60.0)
    hi = np.full(v.shape, 60.0)
    for _ in range(BISECT_ITERS):
        mid = 0.5 * (lo + hi)
        big = mean_v(np.exp(mid)) > v
        lo = np.where(big, mid, lo)
        hi = np.where(big, hi, mid)
        if np.all(hi - lo < 1e-15):
            break
    return np.exp(0.5 * (lo + hi))


def solve_group_variances(cfg: AllocationConfig, v: float, cap: float = np.inf) -> np.ndarray:
    """Split the average variance ``v`` into per-group variances.

    Parameters
    ----------
    cfg : AllocationConfig
    v : float
        Target average, in (0, 1/c*].  At v = 1/c* every group gets 1/c*.
    cap : float, optional
        Per-group ceiling (Omega_S(rho) on the allocation segment); capped
        groups are held at the ceiling and the rest absorb the difference.

    Returns
    -------
    ndarray of shape (G,)
    """
    top = 1.0 / cfg.c_star
    if not (0.0 < v <= top * (1 + 1e-12)):
        raise ValueError(f"v={v} outside the allocation range (0, {top}]")
    if v > cap:
        raise InfeasibleAllocation(f"average {v} exceeds the per-group cap {cap}")
    if v >= top * (1 - 1e-15) or np.all(cfg.gammas == cfg.gammas[0]):
        return np.full(cfg.G, min(v, cap))
    if v >= cap * (1 - 1e-15):
        return np.full(cfg.G, cap)
    t = float(_solve_t(cfg.gammas, cfg.c_star, v, cap))
    return np.minimum(1.0 / (cfg.c_star + t / cfg.gammas), cap)


@dataclass
class GroupCurves:
    """Per-group MMSE targets on a quadrature grid over [0, snr].

    ``weights`` integrate any column against d rho exactly as the rates do,
    so ``weights @ v_g[g]`` is the rate of group g in nats per antenna.
    """

    rho: np.ndarray
    weights: np.ndarray
    v_g: np.ndarray          # shape (G, len(rho))
    average: np.ndarray      # Omega_C* on the grid
    omega_s: np.ndarray
    snr: float
    rho_star: float
    gammas: np.ndarray
    rates: np.ndarray = field(default=None)
    sum_rate: float = field(default=None)

    @property
    def G(self) -> int:
        return self.v_g.shape[0]


def _gl_panels(edges, nodes_per_panel=16):
    x, w = np.polynomial.legendre.leggauss(nodes_per_panel)
    a, b = edges[:-1, None], edges[1:, None]
    pts = 0.5 * (b - a) * x[None, :] + 0.5 * (b + a)
    wts = 0.5 * (b - a) * w[None, :]
    return pts.ravel(), wts.ravel()


def _segment_edges(a, b, n_panels, geometric=True):
    if b <= a:
        return np.array([a, b])
    if geometric and a > 0:
        return np.geomspace(a, b, n_panels + 1)
    return np.linspace(a, b, n_panels + 1)


def group_mmse_curves(spectrum: SingularSpectrum, c: Constellation, snr: float,
                      gammas, fixed_point: FixedPoint | None = None,
                      n_panels: int = 24, nodes_per_panel: int = 16) -> GroupCurves:
    """Per-group target curves and rates.

    Where Omega_S lies below the LD curve every group tracks Omega_S.  Where
    it does not, the LD value ``v = varphi_L(rho)`` is split among groups
    with ``solve_group_variances``, each group capped at Omega_S(rho).  The
    curves are built on composite Gauss-Legendre panels split at every
    crossing, with the same nodes for every group.
    """
    fp = fixed_point or find_fixed_point(spectrum, snr, c)
    rho_star = fp.rho_star
    cfg = AllocationConfig(gammas, 1.0 / float(omega_S(c, rho_star)))

    cuts = sorted({0.0, snr, *(r for r, _ in fp.candidates if 0 < r < snr)})
    pts, wts = [], []
    for a, b in zip(cuts[:-1], cuts[1:]):
        edges = _segment_edges(a, b, n_panels, geometric=a > 0)
        if a == 0.0:
            # resolve the curvature near the origin with a graded first panel
            edges = np.unique(np.concatenate(([0.0], np.geomspace(min(1e-3, b / 10), b, n_panels))))
        p, w = _gl_panels(edges, nodes_per_panel)
        pts.append(p)
        wts.append(w)
    # grid endpoints carry zero weight but make the curves plottable
    rho = np.concatenate([[0.0], *pts, [snr]])
    weights = np.concatenate([[0.0], *wts, [0.0]])
    order = np.argsort(rho, kind="stable")
    rho, weights = rho[order], weights[order]

    om_s = np.asarray(omega_S(c, rho), dtype=float)
    ld = np.zeros_like(rho)
    ld[rho < snr] = varphi_L(spectrum, snr, rho[rho < snr])
    avg = np.where(rho < snr, np.minimum(om_s, ld), 0.0)

    v_g = np.tile(np.where(rho < snr, om_s, 0.0), (cfg.G, 1))
    alloc = (ld < om_s - 1e-12) & (rho < snr) & (avg > 0)
    if np.any(alloc):
        v = avg[alloc]
        cap = om_s[alloc]
        top = 1.0 / cfg.c_star
        if np.any(v > top * (1 + 1e-9)):
            bad = rho[alloc][v > top * (1 + 1e-9)]
            raise InfeasibleAllocation(
                f"LD curve above Omega_S(rho*) at rho={bad[0]:.6g}; crossing structure not supported")
        v = np.minimum(v, top)
        t = _solve_t(cfg.gammas, cfg.c_star, v, cap)
        split = np.minimum(1.0 / (cfg.c_star + t[None, :] / cfg.gammas[:, None]), cap[None, :])
        same = np.all(cfg.gammas == cfg.gammas[0]) | (v >= top * (1 - 1e-15))
        split[:, same] = v[same]
        v_g[:, alloc] = split
    v_g[:, rho >= snr] = 0.0

    return GroupCurves(rho, weights, v_g, avg, om_s, snr, rho_star, cfg.gammas)


def group_rates(curves: GroupCurves, n: int, reference: float | None = None,
                atol: float = 2e-4) -> tuple[np.ndarray, float]:
    """Per-group rates R_Cg (nats per antenna) and the sum rate (nats).

    ``R_sum = (N/G) sum_g R_Cg``.  If ``reference`` (the area under
    Omega_C*, per antenna) is given, the average group rate must match it
    within ``atol`` or RateMismatch is raised.
    """
    rates = curves.v_g @ curves.weights
    sum_rate = n / curves.G * float(np.sum(rates))
    if reference is not None:
        gap = abs(np.mean(rates) - reference)
        if gap > atol:
            raise RateMismatch(f"group rates average {np.mean(rates):.8f} vs area {reference:.8f} (gap {gap:.3g})")
    curves.rates = rates
    curves.sum_rate = sum_rate
    return rates, sum_rate


def fit_gammas(spectrum: SingularSpectrum, c: Constellation, snr: float, split,
               fixed_point: FixedPoint | None = None, tol: float = 1e-6) -> np.ndarray:
    """Two-group gammas whose rates are in the ratio ``split[0] : split[1]``.

    gamma_1 is fixed at 1 and gamma_2 is bisected in log space.  Raises
    InfeasibleAllocation if the ratio is outside what the clipping allows.
    """
    split = np.asarray(split, dtype=float)
    if split.shape != (2,) or np.any(split <= 0):
        raise ValueError("split must be two positive numbers")
    fp = fixed_point or find_fixed_point(spectrum, snr, c)
    target = split[0] / split[1]

    def ratio(log_g2):
        cur = group_mmse_curves(spectrum, c, snr, [1.0, np.exp(log_g2)], fp)
        r = cur.v_g @ cur.weights
        return r[0] / r[1]

    lo, hi = -12.0, 12.0
    # R_C1 / R_C2 falls as gamma_2 grows
    r_lo, r_hi = ratio(lo), ratio(hi)
    if not r_hi <= target <= r_lo:
        raise InfeasibleAllocation(
            f"rate ratio {target:.4g} outside [{r_hi:.4g}, {r_lo:.4g}] reachable by gammas")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if ratio(mid) > target:
            lo = mid
        else:
            hi = mid
    return np.array([1.0, np.exp(0.5 * (lo + hi))])


@dataclass
class RateTable:
    """Rates per group: nats and bits per antenna, group total bits, code rate."""

    gammas: np.ndarray
    nats: np.ndarray
    bits: np.ndarray
    group_bits: np.ndarray
    code_rate: np.ndarray
    sum_rate_nats: float

    def rows(self):
        yield ("group", "gamma", "rate_nats", "rate_bits", "group_rate_bits", "code_rate")
        for g in range(self.gammas.size):
            yield (g, float(self.gammas[g]), float(self.nats[g]), float(self.bits[g]),
                   float(self.group_bits[g]), float(self.code_rate[g]))


def rate_table(curves: GroupCurves, n: int, c: Constellation) -> RateTable:
    """Rate table with the group rate counted over the group's N/G antennas.

    The code rate is bits per antenna over bits per symbol, the rate an
    LDPC code would need on each antenna's stream.
    """
    rates, total = group_rates(curves, n)
    bits = rates / np.log(2)
    n_u = n / curves.G
    return RateTable(curves.gammas, rates, bits, n_u * bits, bits / c.bits_per_symbol, total)
