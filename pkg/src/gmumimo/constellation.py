"""Discrete signalling priors and the scalar AWGN MMSE function.

All noise is circularly-symmetric complex Gaussian with unit variance, so the
scalar observation model is ``y = sqrt(rho) * x + z`` or, equivalently,
``r = x + z / sqrt(rho)``.  Mutual information is in nats throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import logsumexp

__all__ = [
    "Constellation",
    "FramingError",
    "get_constellation",
    "gauss_hermite_2d",
    "omega_S",
    "mutual_information",
    "posterior_mean_var",
    "symbol_moments_from_llrs",
]

CONSTELLATIONS = ("bpsk", "qpsk", "16qam", "gaussian")


class FramingError(ValueError):
    """Bit stream length is not a multiple of the bits per symbol."""


@dataclass(frozen=True, eq=False)
class Constellation:
    """A unit-energy discrete prior with a Gray bit labelling.

    ``labels[i]`` is the integer whose ``bits_per_symbol`` binary digits
    (most significant first) map to ``symbols[i]``.  The ``gaussian`` kind
    carries no points; it is a synthetic prior used for closed-form checks.
    """

    name: str
    symbols: np.ndarray
    probs: np.ndarray
    bits_per_symbol: int
    labels: np.ndarray
    # ((levels, probs) in-phase, (levels, probs) quadrature) for product priors
    axes: tuple | None = None
    _bit_table: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.is_gaussian:
            object.__setattr__(self, "_bit_table", np.zeros((0, 0), dtype=np.int8))
            return
        bps = self.bits_per_symbol
        shifts = np.arange(bps - 1, -1, -1)
        table = (self.labels[:, None] >> shifts[None, :]) & 1
        object.__setattr__(self, "_bit_table", table.astype(np.int8))

    @property
    def is_gaussian(self) -> bool:
        return self.name == "gaussian"

    @property
    def size(self) -> int:
        return len(self.symbols)

    @property
    def bit_table(self) -> np.ndarray:
        """(size, bits_per_symbol) array; row i is the bit pattern of symbol i."""
        return self._bit_table

    @property
    def energy(self) -> float:
        if self.is_gaussian:
            return 1.0
        return float(np.sum(self.probs * np.abs(self.symbols) ** 2))

    def modulate(self, bits) -> np.ndarray:
        """Map a bit array (last axis) to symbols, MSB first within a symbol."""
        self._require_discrete()
        bits = np.asarray(bits, dtype=np.int64)
        bps = self.bits_per_symbol
        if bits.shape[-1] % bps:
            raise FramingError(
                f"{bits.shape[-1]} bits is not a multiple of {bps} bits/symbol"
            )
        grouped = bits.reshape(bits.shape[:-1] + (-1, bps))
        weights = 1 << np.arange(bps - 1, -1, -1)
        label = grouped @ weights
        return self._symbol_by_label[label]

    def demodulate_llr(self, r, rho) -> np.ndarray:
        """Exact bit LLRs ``log P(b=0|r) / P(b=1|r)`` at noise precision ``rho``.

        The output has the symbol axis expanded to ``bits_per_symbol`` bits,
        in the same order :meth:`modulate` consumes them.
        """
        self._require_discrete()
        r = np.asarray(r, dtype=complex)
        rho = np.asarray(rho, dtype=float)
        if rho.ndim:
            rho = rho[..., None]
        logp = np.log(self.probs) - rho * np.abs(r[..., None] - self.symbols) ** 2
        out = np.empty(r.shape + (self.bits_per_symbol,))
        for i in range(self.bits_per_symbol):
            zero = self._bit_table[:, i] == 0
            out[..., i] = logsumexp(logp[..., zero], axis=-1) - logsumexp(
                logp[..., ~zero], axis=-1
            )
        return out.reshape(r.shape[:-1] + (-1,)) if r.ndim else out

    def hard_decision(self, r) -> np.ndarray:
        """Index of the nearest symbol (ML for a uniform prior)."""
        self._require_discrete()
        r = np.asarray(r, dtype=complex)
        return np.argmin(np.abs(r[..., None] - self.symbols), axis=-1)

    def bits_of(self, index) -> np.ndarray:
        """Bit patterns of symbol indices, flattened along the last axis."""
        table = self._bit_table[np.asarray(index)]
        return table.reshape(table.shape[:-2] + (-1,))

    @property
    def _symbol_by_label(self) -> np.ndarray:
        out = np.empty(self.size, dtype=complex)
        out[self.labels] = self.symbols
        return out

    def _require_discrete(self):
        if self.is_gaussian:
            raise ValueError("the gaussian prior has no discrete symbols or bit labels")


def _gray_pam(bits_per_dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Gray-labelled PAM levels, ordered from the largest amplitude down."""
    m = 1 << bits_per_dim
    levels = np.arange(m - 1, -m, -2, dtype=float)
    labels = np.array([i ^ (i >> 1) for i in range(m)])
    return levels, labels


@lru_cache(maxsize=None)
def get_constellation(name: str) -> Constellation:
    """Look up a constellation by its config name.

    QPSK uses ``00 -> (1+1j)/sqrt(2)``; the first bit selects the sign of
    the in-phase part and the second the quadrature part.  16-QAM puts the
    first two bits on the in-phase Gray-PAM4 and the last two on quadrature.
    """
    name = name.lower()
    if name == "gaussian":
        return Constellation("gaussian", np.zeros(0, complex), np.zeros(0), 0, np.zeros(0, int))
    if name == "bpsk":
        axes = ((np.array([1.0, -1.0]), np.full(2, 0.5)), (np.zeros(1), np.ones(1)))
        return Constellation(
            "bpsk", np.array([1.0 + 0j, -1.0 + 0j]), np.full(2, 0.5), 1, np.array([0, 1]), axes
        )
    if name in ("qpsk", "16qam"):
        bpd = 1 if name == "qpsk" else 2
        levels, lab = _gray_pam(bpd)
        re, im = np.meshgrid(levels, levels, indexing="ij")
        lre, lim = np.meshgrid(lab, lab, indexing="ij")
        scale = np.sqrt(2 * np.mean(levels**2))
        symbols = (re + 1j * im).ravel() / scale
        labels = ((lre << bpd) | lim).ravel()
        n = symbols.size
        pam = (levels / scale, np.full(levels.size, 1.0 / levels.size))
        return Constellation(name, symbols, np.full(n, 1.0 / n), 2 * bpd, labels, (pam, pam))
    raise ValueError(f"unknown constellation {name!r}; expected one of {CONSTELLATIONS}")


@lru_cache(maxsize=8)
def gauss_hermite_2d(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights for E[f(z)], z ~ CN(0, 1), as a tensor GH rule."""
    t, w = np.polynomial.hermite.hermgauss(order)
    z = (t[:, None] + 1j * t[None, :]).ravel()
    wz = (w[:, None] * w[None, :]).ravel() / np.pi
    return z, wz


def _posterior_stats(c: Constellation, y, sqrt_rho):
    """Posterior mean and variance of x from y = sqrt_rho * x + z."""
    logp = np.log(c.probs) - np.abs(y[..., None] - sqrt_rho * c.symbols) ** 2
    logp = logp - logp.max(axis=-1, keepdims=True)
    p = np.exp(logp)
    p /= p.sum(axis=-1, keepdims=True)
    mean = p @ c.symbols
    second = p @ (np.abs(c.symbols) ** 2)
    return mean, np.maximum(second - np.abs(mean) ** 2, 0.0)


def _axis_rule(levels, rho_max, half_width=9.0):
    """Trapezoid nodes/weights for E[f(n)], n ~ N(0, 1/2), fine enough to
    resolve the decision-boundary transitions of a PAM posterior up to
    precision ``rho_max``."""
    gap = np.sqrt(rho_max) * np.min(np.diff(np.sort(levels))) if levels.size > 1 else 0.0
    h = min(0.1, 0.5 / (1.0 + gap))
    n = np.arange(-half_width, half_width + h / 2, h)
    return n, h / np.sqrt(np.pi) * np.exp(-n * n)


def _axis_mmse_mi(levels, probs, rho) -> tuple[np.ndarray, np.ndarray]:
    """MMSE and mutual information (nats) of one real PAM axis with noise
    variance 1/2, y = sqrt(rho) a + n, for a 1-D array of ``rho``."""
    rho = np.asarray(rho, dtype=float)
    if levels.size == 1:
        return np.zeros_like(rho), np.zeros_like(rho)
    n, w = _axis_rule(levels, rho.max(initial=0.0))
    sr = np.sqrt(rho)[:, None, None, None]
    # exponent of p(y|a_k) for y = sqrt(rho) a_j + n; axes (rho, j, node, k)
    d = sr * (levels[:, None, None] - levels[None, None, :])[None] + n[None, None, :, None]
    lp = np.log(probs) - d**2
    lse = logsumexp(lp, axis=-1, keepdims=True)
    p = np.exp(lp - lse)
    mean = p @ levels
    var = np.maximum(p @ levels**2 - mean**2, 0.0)
    mmse = (var @ w) @ probs
    mi = -(((lse[..., 0] + n**2) @ w) @ probs)
    return mmse, mi


def _gh_eval(c: Constellation, rho: float, order: int, what: str) -> float:
    z, wz = gauss_hermite_2d(order)
    sr = np.sqrt(rho)
    if what == "mmse":
        y = sr * c.symbols[:, None] + z[None, :]
        _, var = _posterior_stats(c, y, sr)
        return float(c.probs @ (var @ wz))
    d = sr * (c.symbols[:, None, None] - c.symbols[None, None, :]) + z[None, :, None]
    lr = logsumexp(np.log(c.probs) - np.abs(d) ** 2, axis=-1) + np.abs(z)[None, :] ** 2
    return float(-(c.probs @ (lr @ wz)))


def _vectorized(c, rho, order, what, closed_form):
    rho_arr = np.asarray(rho, dtype=float)
    if np.any(rho_arr < 0):
        raise ValueError("rho must be nonnegative")
    if c.is_gaussian:
        out = closed_form(rho_arr)
    elif c.axes is not None and order is None:
        flat = rho_arr.ravel()
        out = np.zeros(flat.shape)
        # bound the work per batch: one node set is shared by the whole chunk
        for i in range(0, flat.size, 256):
            chunk = flat[i : i + 256]
            for levels, probs in c.axes:
                out[i : i + 256] += _axis_mmse_mi(levels, probs, chunk)[0 if what == "mmse" else 1]
        out = out.reshape(rho_arr.shape)
    else:
        out = np.array([_gh_eval(c, r, order or 32, what) for r in rho_arr.ravel()])
        out = out.reshape(rho_arr.shape)
    return float(out) if out.ndim == 0 else out


def omega_S(c: Constellation, rho, order: int | None = None):
    """Per-symbol MMSE of x ~ c observed as sqrt(rho) x + CN(0, 1) noise.

    Product constellations are integrated axis by axis with a trapezoid rule
    whose step shrinks with sqrt(rho); pass ``order`` to force the tensor
    Gauss-Hermite rule of that order instead (the only route for
    non-product priors).  Accepts scalar or array ``rho``.
    """
    return _vectorized(c, rho, order, "mmse", lambda r: 1.0 / (1.0 + r))


def mutual_information(c: Constellation, a, order: int | None = None):
    """I(x; sqrt(a) x + z) in nats, by direct quadrature of the output entropy."""
    return _vectorized(c, a, order, "mi", np.log1p)


def posterior_mean_var(c: Constellation, r, rho):
    """Exact posterior mean and variance of x given r = x + rho^{-1/2} z.

    Works elementwise over array ``r``; ``rho`` may broadcast against it.
    Computed in the log domain so no likelihood underflow produces NaN.
    """
    rho = np.asarray(rho, dtype=float)
    if np.any(rho <= 0):
        raise ValueError("rho must be positive")
    r = np.asarray(r, dtype=complex)
    if c.is_gaussian:
        mean = rho / (1.0 + rho) * r
        return mean, np.broadcast_to(1.0 / (1.0 + rho), mean.shape).copy()
    sr = np.sqrt(rho)
    if sr.ndim:
        sr = sr[..., None]
        mean, var = _posterior_stats(c, sr[..., 0] * r, sr)
    else:
        mean, var = _posterior_stats(c, sr * r, sr)
    return mean, var


def symbol_moments_from_llrs(c: Constellation, llrs) -> tuple[np.ndarray, np.ndarray]:
    """Symbol mean/variance from per-bit LLRs, treating bits as independent.

    ``llrs`` has bits on the last axis in modulation order; the result has
    one entry per symbol.
    """
    llrs = np.asarray(llrs, dtype=float)
    bps = c.bits_per_symbol
    lb = llrs.reshape(llrs.shape[:-1] + (-1, bps))
    # log P(b = bit) = -softplus(+-L)
    sign = 1 - 2 * c.bit_table.astype(float)  # +1 for bit 0
    logp = -np.logaddexp(0.0, -lb[..., None, :] * sign)
    logp = logp.sum(axis=-1) + np.log(c.probs)
    logp -= logp.max(axis=-1, keepdims=True)
    p = np.exp(logp)
    p /= p.sum(axis=-1, keepdims=True)
    mean = p @ c.symbols
    var = np.maximum(p @ (np.abs(c.symbols) ** 2) - np.abs(mean) ** 2, 0.0)
    return mean, var
