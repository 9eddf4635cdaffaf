"""Periodic spectral fields on the unit torus ``[0, 1)``.

A field is stored as its complex Fourier coefficients ``u_k`` for
``k = -K..K`` so that ``u(y) = sum_k u_k exp(2 pi i k y)``. Real fields are
conjugate symmetric. Grids are odd-sized (``2K + 1`` or larger) so no Nyquist
mode ever has to be split.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * np.pi


def uniform_grid(m: int) -> np.ndarray:
    return np.arange(m) / m


@dataclass(frozen=True)
class SpectralField:
    """Real periodic function given by Fourier modes ``-K..K``."""

    coeffs: np.ndarray
    zero_mean: bool = False
    _k: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        if c.ndim != 1 or c.size % 2 != 1:
            raise ValueError("coefficient array must have odd length 2K+1")
        K = c.size // 2
        # enforce conjugate symmetry so evaluation is real
        c = 0.5 * (c + np.conj(c[::-1]))
        if self.zero_mean:
            c[K] = 0.0
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "_k", np.arange(-K, K + 1))

    # construction -----------------------------------------------------

    @classmethod
    def zeros(cls, K: int, zero_mean: bool = False) -> "SpectralField":
        return cls(np.zeros(2 * K + 1, dtype=complex), zero_mean)

    @classmethod
    def from_samples(cls, values, K: int | None = None, zero_mean: bool = False) -> "SpectralField":
        """Fourier-analyse equispaced samples ``values[j] = u(j / m)``.

        For even ``m`` the Nyquist mode is dropped. ``K`` truncates (or
        zero-pads) the result.
        """
        v = np.asarray(values, dtype=float)
        m = v.size
        hat = np.fft.fft(v) / m
        kmax = (m - 1) // 2
        if K is None:
            K = kmax
        c = np.zeros(2 * K + 1, dtype=complex)
        kk = min(K, kmax)
        c[K] = hat[0]
        c[K + 1:K + kk + 1] = hat[1:kk + 1]
        c[K - kk:K] = hat[m - kk:]
        return cls(c, zero_mean)

    @classmethod
    def from_function(cls, fn, K: int, zero_mean: bool = False) -> "SpectralField":
        m = 4 * K + 1
        return cls.from_samples(fn(uniform_grid(m)), K, zero_mean)

    @classmethod
    def from_modes(cls, modes, K: int) -> "SpectralField":
        """Build from ``(kind, k, amplitude)`` triples, ``kind`` in {cos, sin, const}."""
        c = np.zeros(2 * K + 1, dtype=complex)
        for kind, k, amp in modes:
            k = int(k)
            if k > K:
                raise ValueError(f"mode {k} exceeds truncation K={K}")
            if kind == "const" or k == 0:
                c[K] += amp
            elif kind == "cos":
                c[K + k] += amp / 2
                c[K - k] += amp / 2
            elif kind == "sin":
                c[K + k] += amp / 2j
                c[K - k] -= amp / 2j
            else:
                raise ValueError(f"unknown mode kind {kind!r}")
        return cls(c)

    @classmethod
    def from_real(cls, real_coeffs) -> "SpectralField":
        """Inverse of :meth:`to_real` (``a0, a1, b1, a2, b2, ...``)."""
        r = np.asarray(real_coeffs, dtype=float)
        K = (r.size - 1) // 2
        c = np.zeros(2 * K + 1, dtype=complex)
        c[K] = r[0]
        a, b = r[1::2], r[2::2]
        c[K + 1:] = (a - 1j * b) / 2
        c[:K] = ((a + 1j * b) / 2)[::-1]
        return cls(c)

    # views ------------------------------------------------------------

    @property
    def K(self) -> int:
        return self.coeffs.size // 2

    @property
    def wavenumbers(self) -> np.ndarray:
        return self._k

    def to_real(self) -> np.ndarray:
        """Real cosine/sine coefficients ``a0, a1, b1, ..., aK, bK``."""
        K = self.K
        pos = self.coeffs[K + 1:]
        out = np.empty(2 * K + 1)
        out[0] = self.coeffs[K].real
        out[1::2] = 2 * pos.real
        out[2::2] = -2 * pos.imag
        return out

    def mean(self) -> float:
        return float(self.coeffs[self.K].real)

    def evaluate(self, y, deriv: int = 0) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        mult = (2j * np.pi * self._k) ** deriv
        phase = np.exp(2j * np.pi * np.multiply.outer(y, self._k))
        return (phase @ (mult * self.coeffs)).real

    def to_samples(self, m: int, deriv: int = 0) -> np.ndarray:
        """Values on the ``m``-point grid; requires ``m >= 2K + 1``."""
        K = self.K
        if m < 2 * K + 1:
            return self.evaluate(uniform_grid(m), deriv)
        c = self.coeffs * (2j * np.pi * self._k) ** deriv
        hat = np.zeros(m, dtype=complex)
        hat[: K + 1] = c[K:]
        if K:
            hat[m - K:] = c[:K]
        return np.fft.ifft(hat).real * m

    def derivative(self, order: int = 1) -> "SpectralField":
        return SpectralField(self.coeffs * (2j * np.pi * self._k) ** order, self.zero_mean)

    def resized(self, K: int) -> "SpectralField":
        c = np.zeros(2 * K + 1, dtype=complex)
        k = min(K, self.K)
        c[K - k:K + k + 1] = self.coeffs[self.K - k:self.K + k + 1]
        return SpectralField(c, self.zero_mean)

    def sup_norm(self, oversample: int = 8) -> float:
        return float(np.max(np.abs(self.to_samples(oversample * (2 * self.K + 1)))))

    def __add__(self, other):
        if isinstance(other, SpectralField):
            K = max(self.K, other.K)
            return SpectralField(self.resized(K).coeffs + other.resized(K).coeffs)
        c = self.coeffs.copy()
        c[self.K] += other
        return SpectralField(c)

    def __sub__(self, other):
        return self + (-1.0) * other

    def __rmul__(self, scalar):
        return SpectralField(self.coeffs * float(scalar), self.zero_mean)

    __mul__ = __rmul__


def fractional_multiplier(u: SpectralField, s: float) -> SpectralField:
    """Apply ``(-d^2/dy^2)^s`` as the Fourier multiplier ``(2 pi |k|)^(2s)``."""
    if s < 0:
        raise ValueError("order must be nonnegative")
    if s == 0:
        return u
    mult = (TWO_PI * np.abs(u.wavenumbers)) ** (2 * s)
    return SpectralField(u.coeffs * mult, u.zero_mean)


def sobolev_norm(u: SpectralField, s: float) -> float:
    """Homogeneous ``W^{s,2}``-equivalent norm ``(sum (2 pi |k|)^(2s) |u_k|^2)^(1/2)``."""
    k = np.abs(u.wavenumbers)
    if s == 0:
        w = np.ones(k.shape)
    else:
        w = (TWO_PI * k) ** (2 * s)
    return float(np.sqrt(np.sum(w * np.abs(u.coeffs) ** 2)))


def gaussian_multiplier(K: int, radius: float) -> np.ndarray:
    """Fourier symbol ``exp(-radius^2 (2 pi k)^2 / 2)`` of the periodic heat-kernel mollifier."""
    k = np.arange(-K, K + 1)
    return np.exp(-0.5 * radius**2 * (TWO_PI * k) ** 2)


def mollify(u: SpectralField, radius: float) -> SpectralField:
    if radius == 0:
        return u
    return SpectralField(u.coeffs * gaussian_multiplier(u.K, radius), u.zero_mean)


def grid_derivative(values: np.ndarray, order: int = 1) -> np.ndarray:
    """Spectral derivative of samples on an odd-sized uniform grid (last axis)."""
    m = values.shape[-1]
    k = np.fft.fftfreq(m, 1.0 / m)
    hat = np.fft.fft(values, axis=-1) * (2j * np.pi * k) ** order
    return np.fft.ifft(hat, axis=-1).real


def truncate_samples(values: np.ndarray, K: int) -> SpectralField:
    return SpectralField.from_samples(values, K)
