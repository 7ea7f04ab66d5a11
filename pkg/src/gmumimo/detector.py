"""OAMP/VAMP receiver for y = A x + n with orthogonalised LD and NLD.

The LD is an LMMSE estimator applied in the right-singular basis of A, so
each step costs two N x N rotations and a diagonal solve.  The NLD is either
a symbol-by-symbol MMSE demapper or a bank of APP (BP) decoders, one per
user.  Both are orthogonalised so that their errors stay uncorrelated.

All vectors may carry a trailing block axis (N, L): columns share the
channel and are processed together.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelMatrix
from .coding import LdpcCode, bp_decode
from .constellation import Constellation, omega_S, posterior_mean_var, symbol_moments_from_llrs

__all__ = [
    "DegenerateLD",
    "DetectorConfig",
    "DetectorState",
    "NonContracting",
    "Trajectory",
    "UserCode",
    "ld_step",
    "nld_coded_step",
    "nld_uncoded_step",
    "residual_variance",
    "run",
]


class DegenerateLD(ArithmeticError):
    """The LD output carries no information (v_s ~ Omega_L)."""


class NonContracting(ArithmeticError):
    """The NLD output variance is not below its input variance."""


@dataclass
class DetectorConfig:
    max_iters: int = 30
    tol: float = 0.0
    damping: float = 1.0
    bp_iters: int = 30
    llr_clip: float = 50.0
    var_floor: float = 1e-12
    variance: str = "analytic"     # uncoded NLD: "analytic" (Omega_S) or "empirical"
    vs_estimate: str = "residual"  # coded mode: "residual" or "formula" (posterior variance)

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must be in (0, 1]")
        if self.variance not in ("analytic", "empirical"):
            raise ValueError(f"unknown variance mode {self.variance!r}")
        if self.vs_estimate not in ("formula", "residual"):
            raise ValueError(f"unknown v_s estimate {self.vs_estimate!r}")


@dataclass
class DetectorState:
    s: np.ndarray
    v_s: float
    r: np.ndarray | None = None
    rho: float = 0.0
    iter: int = 0

    @classmethod
    def initial(cls, n: int, block: int | None = None) -> "DetectorState":
        shape = (n,) if block is None else (n, block)
        return cls(np.zeros(shape, dtype=complex), 1.0)


@dataclass
class Trajectory:
    iters: list = field(default_factory=list)
    rho: list = field(default_factory=list)
    v: list = field(default_factory=list)
    mse_r: list | None = None
    mse_s: list | None = None

    def append(self, it, rho, v, mse_r=None, mse_s=None):
        self.iters.append(it)
        self.rho.append(rho)
        self.v.append(v)
        if mse_r is not None:
            if self.mse_r is None:
                self.mse_r, self.mse_s = [], []
            self.mse_r.append(mse_r)
            self.mse_s.append(mse_s)

    def __len__(self):
        return len(self.iters)

    def rows(self):
        genie = self.mse_r is not None
        yield ("iter", "rho", "v") + (("mse_r", "mse_s") if genie else ())
        for i in range(len(self)):
            row = (self.iters[i], self.rho[i], self.v[i])
            if genie:
                row += (self.mse_r[i], self.mse_s[i])
            yield row


def ld_step(state: DetectorState, channel: ChannelMatrix, y, snr: float,
            var_floor: float = 1e-12) -> tuple[np.ndarray, float]:
    """Orthogonalised LMMSE step.

    Returns ``r`` and its precision ``rho = 1/Omega_L(1/v_s) - 1/v_s``.
    """
    v_s = max(state.v_s, var_floor)
    spec = channel.spectrum
    lam = spec.eigenvalues
    t = spec.sigmas.size
    ty = channel.left_rotate(np.asarray(y, dtype=complex))
    vs_ = channel.v @ state.s
    # rhs = snr Sigma^T U^H y + V s / v_s, in the V basis
    rhs = vs_ / v_s
    rhs[:t] += snr * spec.sigmas.reshape((t,) + (1,) * (ty.ndim - 1)) * ty[:t]
    d = (snr * lam + 1.0 / v_s).reshape((-1,) + (1,) * (ty.ndim - 1))
    x_lmmse = channel.v.conj().T @ (rhs / d)
    om = float(np.mean(1.0 / (snr * lam + 1.0 / v_s)))
    gap = v_s - om
    if gap < 1e-14 * max(v_s, 1.0):
        raise DegenerateLD(f"v_s - Omega_L = {gap:.3g}; LD output is uninformative")
    c_l = v_s / gap
    r = c_l * x_lmmse + (1.0 - c_l) * state.s
    rho = 1.0 / om - 1.0 / v_s
    return r, rho


def _orthogonalise(r, rho, mean, omega, var_floor):
    v_r = 1.0 / rho
    if omega >= v_r * (1 - 1e-12):
        raise NonContracting(f"NLD MMSE {omega:.6g} >= input variance {v_r:.6g}")
    c_c = v_r / (v_r - omega)
    s = c_c * mean + (1.0 - c_c) * r
    v_s = max(1.0 / (1.0 / max(omega, var_floor) - rho), var_floor)
    return s, v_s


def nld_uncoded_step(r, rho: float, c: Constellation, variance: str = "analytic",
                     var_floor: float = 1e-12):
    """Orthogonalised symbol-wise MMSE step.

    Returns ``(s, v_s, omega)`` where ``omega`` is the MMSE used for the
    orthogonalisation: Omega_S(rho) for ``variance="analytic"`` or the mean
    posterior variance for ``"empirical"``.
    """
    if rho <= 0:
        raise ValueError("rho must be positive")
    mean, var = posterior_mean_var(c, r, rho)
    omega = float(omega_S(c, rho)) if variance == "analytic" else float(np.mean(var))
    s, v_s = _orthogonalise(r, rho, mean, omega, var_floor)
    return s, v_s, omega


@dataclass(frozen=True, eq=False)
class UserCode:
    """One user's codeword laid out on a set of antennas.

    Codeword symbols fill ``antennas x block`` column by column (all
    antennas of the first channel use, then the next), so one codeword
    spans every channel use of the frame.
    """

    antennas: np.ndarray
    code: LdpcCode
    group: int = 0

    def gather(self, x: np.ndarray) -> np.ndarray:
        return x[self.antennas].T.reshape(-1)

    def scatter(self, out: np.ndarray, vals: np.ndarray):
        out[self.antennas] = vals.reshape(out.shape[1], self.antennas.size).T


def nld_coded_step(r, rho: float, c: Constellation, users, bp_iters: int = 30,
                   llr_clip: float = 50.0, var_floor: float = 1e-12):
    """Orthogonalised APP-decoding step.

    ``r`` has shape (N, L); each user's symbols are demapped to bit LLRs,
    decoded, and turned back into posterior symbol means and variances.
    Users sharing a code object are decoded as one batch.  The
    orthogonalisation uses the group-average posterior variance.

    Returns ``(s, v_s, omega_groups, results)`` with ``results`` the
    per-user decode results in ``users`` order.
    """
    if rho <= 0:
        raise ValueError("rho must be positive")
    r = np.asarray(r, dtype=complex)
    if r.ndim != 2:
        raise ValueError("coded detection needs an (N, L) block")
    mean = np.zeros_like(r)
    var = np.zeros(r.shape)
    results = [None] * len(users)
    by_code = {}
    for i, u in enumerate(users):
        by_code.setdefault(id(u.code), []).append(i)
    for idx in by_code.values():
        code = users[idx[0]].code
        ru = np.stack([users[i].gather(r) for i in idx])
        llr = np.clip(c.demodulate_llr(ru, rho), -llr_clip, llr_clip)
        res = bp_decode(code, llr, bp_iters, clip=llr_clip)
        if not np.all(np.isfinite(res.llr)):
            raise FloatingPointError("decoder produced non-finite LLRs")
        m, v = symbol_moments_from_llrs(c, res.llr)
        for j, i in enumerate(idx):
            users[i].scatter(mean, m[j])
            users[i].scatter(var, v[j])
            results[i] = _slice_result(res, j)
    groups = sorted({u.group for u in users})
    omega_g = np.array([
        np.mean(np.concatenate([var[u.antennas].ravel() for u in users if u.group == g]))
        for g in groups
    ])
    omega = float(np.mean(omega_g))
    s, v_s = _orthogonalise(r, rho, mean, omega, var_floor)
    return s, v_s, omega_g, results


def residual_variance(s, channel: ChannelMatrix, y, snr: float, floor: float = 1e-12) -> float:
    """Per-entry error variance of ``s`` estimated from the LD residual.

    Uses E||y - A s||^2 = M/snr + tr(A^H A) v_s per column (tr(A^H A) = N),
    valid when the error of s is independent of the noise, as it is for an
    orthogonalised estimate.
    """
    res = np.asarray(y) - channel.apply(s)
    cols = 1 if res.ndim == 1 else res.shape[1]
    est = (np.sum(np.abs(res) ** 2) / cols - channel.m / snr) / channel.n
    return max(float(est), floor)


def _slice_result(res, j):
    from .coding import DecodeResult

    return DecodeResult(res.llr[j], res.bits[j], bool(res.converged[j]), res.iterations)


@dataclass
class DetectionResult:
    x_hat: np.ndarray
    trajectory: Trajectory
    decoded: list | None = None
    iterations: int = 0


def run(y, channel: ChannelMatrix, snr: float, c: Constellation, mode: str = "uncoded",
        cfg: DetectorConfig | None = None, users=None, x_true=None) -> DetectionResult:
    """Iterate LD and NLD from s = 0, v_s = 1.

    Parameters
    ----------
    y : array (M,) or (M, L)
    mode : {"uncoded", "coded"}
        Coded mode needs ``users`` (a list of UserCode) and a 2-d ``y``.
    x_true : array, optional
        Genie mode: record the empirical MSE of r and s each iteration.

    Returns
    -------
    DetectionResult
        Hard symbol decisions (uncoded) or per-user decoded bits (coded),
        plus the (rho, v) trajectory.
    """
    cfg = cfg or DetectorConfig()
    y = np.asarray(y, dtype=complex)
    if y.shape[0] != channel.m:
        raise ValueError(f"y has {y.shape[0]} rows, channel has {channel.m} receive antennas")
    if mode == "coded":
        if users is None:
            raise ValueError("coded mode needs users")
        if y.ndim == 1:
            y = y[:, None]
    elif mode != "uncoded":
        raise ValueError(f"unknown mode {mode!r}")
    block = None if y.ndim == 1 else y.shape[1]
    state = DetectorState.initial(channel.n, block)
    traj = Trajectory()
    decoded = None
    mean_est = state.s
    for it in range(1, cfg.max_iters + 1):
        try:
            r, rho = ld_step(state, channel, y, snr, cfg.var_floor)
        except DegenerateLD:
            # v_s has collapsed to rounding level: nothing left to refine
            if it == 1:
                raise
            break
        state.r, state.rho, state.iter = r, rho, it
        if mode == "uncoded":
            s, v_s, _ = nld_uncoded_step(r, rho, c, cfg.variance, cfg.var_floor)
        else:
            s, v_s, _, decoded = nld_coded_step(r, rho, c, users, cfg.bp_iters,
                                                cfg.llr_clip, cfg.var_floor)
            if cfg.vs_estimate == "residual":
                v_s = min(residual_variance(s, channel, y, snr, cfg.var_floor), 1.0)
        if cfg.damping < 1:
            s = cfg.damping * s + (1 - cfg.damping) * state.s
            v_s = cfg.damping * v_s + (1 - cfg.damping) * state.v_s
        if x_true is not None:
            traj.append(it, rho, v_s, float(np.mean(np.abs(r - x_true) ** 2)),
                        float(np.mean(np.abs(s - x_true) ** 2)))
        else:
            traj.append(it, rho, v_s)
        change = abs(v_s - state.v_s)
        state.s, state.v_s = s, v_s
        if mode == "coded" and all(d.converged for d in decoded):
            break
        if change <= cfg.tol or v_s <= cfg.var_floor:
            break
    if mode == "uncoded":
        mean_est, _ = posterior_mean_var(c, state.r, state.rho)
        x_hat = c.symbols[np.argmin(np.abs(mean_est[..., None] - c.symbols), axis=-1)] \
            if not c.is_gaussian else mean_est
        return DetectionResult(x_hat, traj, None, len(traj))
    return DetectionResult(None, traj, decoded, len(traj))
