"""Right-unitarily-invariant channels held in SVD-factored form.

A channel ``A = U diag(sigmas) V`` is never materialised by the detector;
everything downstream works with the two unitaries and the known singular
values.  The trace normalisation ``tr(A^H A) / N = 1`` is enforced on every
spectrum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ChannelMatrix",
    "ChannelSpec",
    "SingularSpectrum",
    "SingularityError",
    "haar_unitary",
    "make_conditioned_spectrum",
    "make_iid_gaussian_spectrum",
    "omega_L",
]


class SingularityError(ValueError):
    """Omega_L evaluated at rho = 0 on a rank-deficient A^H A."""


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


@dataclass(frozen=True, eq=False)
class SingularSpectrum:
    sigmas: np.ndarray
    m: int
    n: int

    def __post_init__(self):
        s = np.asarray(self.sigmas, dtype=float)
        if s.shape != (min(self.m, self.n),):
            raise ValueError(f"expected {min(self.m, self.n)} singular values, got {s.shape}")
        if np.any(s < 0) or np.any(np.diff(s) > 0):
            raise ValueError("singular values must be nonnegative and nonincreasing")
        object.__setattr__(self, "sigmas", s)

    @property
    def beta(self) -> float:
        """Channel load N / M."""
        return self.n / self.m

    @property
    def eigenvalues(self) -> np.ndarray:
        """The N eigenvalues of A^H A (squared singular values, zero padded)."""
        lam = np.zeros(self.n)
        lam[: self.sigmas.size] = self.sigmas**2
        return lam

    @property
    def kappa(self) -> float:
        return float(self.sigmas[0] / self.sigmas[-1]) if self.sigmas[-1] > 0 else np.inf

    @property
    def is_flat(self) -> bool:
        """True when every eigenvalue of A^H A is equal (phi_L is constant)."""
        lam = self.eigenvalues
        return bool(np.ptp(lam) <= 1e-12 * max(lam.max(), 1.0))

    @classmethod
    def normalized(cls, sigmas, m: int, n: int) -> "SingularSpectrum":
        """Rescale ``sigmas`` so that sum(sigma^2) / n = 1."""
        s = np.sort(np.asarray(sigmas, dtype=float))[::-1]
        s = s * np.sqrt(n / np.sum(s**2))
        return cls(s, m, n)


def haar_unitary(dim: int, seed=None) -> np.ndarray:
    """Draw a Haar-distributed ``dim x dim`` unitary.

    QR of an IID CN(0, 1) matrix, with the phases of R's diagonal pushed into
    Q so the triangular factor has a real positive diagonal; without that
    correction the distribution of Q is not Haar.
    """
    if dim < 1:
        raise ValueError(f"invalid dimension {dim}")
    rng = _rng(seed)
    g = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / np.sqrt(2)
    q, r = np.linalg.qr(g)
    d = np.diag(r)
    return q * (d / np.abs(d))[None, :]


def make_conditioned_spectrum(m: int, n: int, kappa: float) -> SingularSpectrum:
    """Geometrically spaced singular values with max/min ratio ``kappa``."""
    if kappa < 1:
        raise ValueError(f"invalid condition number {kappa}; need kappa >= 1")
    if m < 1 or n < 1:
        raise ValueError("antenna counts must be positive")
    t = min(m, n)
    if t == 1:
        return SingularSpectrum.normalized(np.ones(1), m, n)
    sig = kappa ** (-np.arange(t) / (t - 1))
    return SingularSpectrum.normalized(sig, m, n)


def make_iid_gaussian_spectrum(m: int, n: int, seed=None) -> SingularSpectrum:
    """Singular values of an IID complex Gaussian M x N matrix (Rayleigh fading)."""
    if m < 1 or n < 1:
        raise ValueError("antenna counts must be positive")
    rng = _rng(seed)
    g = rng.standard_normal((m, n)) + 1j * rng.standard_normal((m, n))
    return SingularSpectrum.normalized(np.linalg.svd(g, compute_uv=False), m, n)


def omega_L(spectrum: SingularSpectrum, snr: float, rho):
    """(1/N) Tr[(snr A^H A + rho I)^{-1}] from the spectrum; ``rho`` may be an array."""
    rho_arr = np.asarray(rho, dtype=float)
    lam = spectrum.eigenvalues
    if np.any(rho_arr < 0):
        raise ValueError("rho must be nonnegative")
    if np.any(rho_arr == 0) and np.any(snr * lam == 0):
        raise SingularityError(
            "Omega_L(0) is infinite: A^H A has zero eigenvalues (N > M or rank deficient)"
        )
    out = np.mean(1.0 / (snr * lam + rho_arr[..., None]), axis=-1)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class ChannelMatrix:
    """``A = u @ diag(spectrum) @ v`` with u (M x M) and v (N x N) unitary.

    ``u`` may be None, meaning the identity; the detector's behaviour does
    not depend on the left factor, so large validation runs skip drawing it.
    """

    u: np.ndarray | None
    v: np.ndarray
    spectrum: SingularSpectrum

    @property
    def m(self) -> int:
        return self.spectrum.m

    @property
    def n(self) -> int:
        return self.spectrum.n

    @property
    def beta(self) -> float:
        return self.spectrum.beta

    def apply(self, x: np.ndarray) -> np.ndarray:
        """A @ x for a vector or an (N, L) block, without forming A."""
        t = self.spectrum.sigmas.size
        vx = self.v @ x
        out = np.zeros((self.m,) + vx.shape[1:], dtype=complex)
        out[:t] = self.spectrum.sigmas.reshape((t,) + (1,) * (vx.ndim - 1)) * vx[:t]
        return out if self.u is None else self.u @ out

    def left_rotate(self, y: np.ndarray) -> np.ndarray:
        """u^H @ y."""
        return y if self.u is None else self.u.conj().T @ y

    def dense(self) -> np.ndarray:
        """Materialise A.  Only meant for small-dimension checks."""
        lam = np.zeros((self.m, self.n))
        t = self.spectrum.sigmas.size
        lam[np.arange(t), np.arange(t)] = self.spectrum.sigmas
        u = np.eye(self.m) if self.u is None else self.u
        return u @ lam @ self.v

    @classmethod
    def draw(cls, spectrum: SingularSpectrum, seed=None, left: bool = True) -> "ChannelMatrix":
        rng = _rng(seed)
        v = haar_unitary(spectrum.n, rng)
        u = haar_unitary(spectrum.m, rng) if left else None
        return cls(u, v, spectrum)


@dataclass(frozen=True)
class ChannelSpec:
    """Serialisable channel description: ``{m, n, spectrum_kind, kappa, seed}``."""

    m: int
    n: int
    spectrum_kind: str = "conditioned"
    kappa: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.spectrum_kind not in ("iid", "conditioned"):
            raise ValueError(f"spectrum_kind must be 'iid' or 'conditioned', got {self.spectrum_kind!r}")
        if self.m < 1 or self.n < 1:
            raise ValueError("antenna counts must be positive")

    def spectrum(self, seed=None) -> SingularSpectrum:
        """The singular spectrum; iid spectra are drawn from ``seed`` (default: own seed)."""
        if self.spectrum_kind == "conditioned":
            return make_conditioned_spectrum(self.m, self.n, self.kappa)
        return make_iid_gaussian_spectrum(self.m, self.n, self.seed if seed is None else seed)

    def draw(self, seed=None, left: bool = True) -> ChannelMatrix:
        """Draw a full channel.  For iid spectra the singular values are fresh
        per draw; conditioned spectra are deterministic and only U, V vary."""
        rng = _rng(self.seed if seed is None else seed)
        if self.spectrum_kind == "iid":
            # singular values and Haar singular vectors of a Gaussian matrix
            # are independent, so they are drawn separately
            spec = make_iid_gaussian_spectrum(self.m, self.n, rng)
        else:
            spec = self.spectrum()
        return ChannelMatrix.draw(spec, rng, left=left)
