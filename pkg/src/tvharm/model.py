"""Time-varying harmonic signal model.

A window of ``N`` samples is modelled as

    s_n = a_{0,n}/2 + sum_p a_{p,n} cos(p phi_n) + b_{p,n} sin(p phi_n)

where the common phase ``phi_n`` and every Fourier coefficient track are
polynomials in ``n - n0`` (``n0 = (N-1)/2``) expressed in the Taylor basis
``h_l(t) = t**l / l!``. Because of that basis, each coefficient is the
l-th derivative of its track at the window centre, in per-sample units.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

__all__ = [
    "ModelConfig",
    "PhaseParams",
    "AmplitudeParams",
    "WindowedFrame",
    "FittedModel",
    "ContinuousParams",
    "taylor_basis",
    "basis_matrix",
    "common_phase_track",
    "f0_track",
    "f0dot_track",
    "amplitude_tracks",
    "rate_tracks",
    "synthesize",
    "to_continuous",
    "mag_phase",
]


def _frozen(arr) -> np.ndarray:
    out = np.array(arr, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class ModelConfig:
    """Model orders, frequency bounds and stopping rule for one fit.

    Frequencies are normalized (cycles/sample). ``f0_max`` defaults to
    ``0.5 / P`` so that every harmonic stays below Nyquist.
    """

    P: int
    L_phi: int = 2
    L: int = 0
    f0_min: float = 0.0
    f0_max: Optional[float] = None
    f0dot_max: Optional[float] = None
    r_max: Optional[float] = None
    rate_constrained_harmonics: Optional[tuple[int, ...]] = None
    rho: float = 1e-10
    max_iters: int = 50

    def __post_init__(self):
        if int(self.P) != self.P or self.P < 1:
            raise ValueError(f"P must be a positive integer, got {self.P}")
        if int(self.L_phi) != self.L_phi or self.L_phi < 1:
            raise ValueError(f"L_phi must be >= 1, got {self.L_phi}")
        if int(self.L) != self.L or self.L < 0:
            raise ValueError(f"L must be >= 0, got {self.L}")
        if self.f0_max is None:
            object.__setattr__(self, "f0_max", 0.5 / self.P)
        if not 0.0 <= self.f0_min < self.f0_max:
            raise ValueError(
                f"need 0 <= f0_min < f0_max, got [{self.f0_min}, {self.f0_max}]")
        if self.f0_max > 0.5 / self.P * (1 + 1e-12):
            raise ValueError(
                f"f0_max={self.f0_max} puts harmonic {self.P} above Nyquist")
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.rate_constrained_harmonics is not None:
            idx = tuple(int(p) for p in self.rate_constrained_harmonics)
            if any(p < 0 or p > self.P for p in idx):
                raise ValueError("rate_constrained_harmonics must lie in 0..P")
            object.__setattr__(self, "rate_constrained_harmonics", idx)

    @property
    def n_amp(self) -> int:
        """Length of the amplitude parameter vector."""
        return (2 * self.P + 1) * (self.L + 1)

    def min_samples(self) -> int:
        return self.n_amp + self.L_phi


@dataclass(frozen=True)
class PhaseParams:
    """Common-phase coefficients ``[phi_1, ..., phi_{L_phi}]`` (rad/sample**l)."""

    phi: np.ndarray

    def __post_init__(self):
        phi = _frozen(np.atleast_1d(self.phi))
        if phi.ndim != 1 or phi.size < 1:
            raise ValueError("phi must be a non-empty vector")
        if not np.all(np.isfinite(phi)):
            raise ValueError("phase coefficients must be finite")
        object.__setattr__(self, "phi", phi)

    @property
    def L_phi(self) -> int:
        return self.phi.size

    @classmethod
    def from_f0(cls, f0: float, L_phi: int = 1, f0dot: float = 0.0) -> "PhaseParams":
        """Phase with centre frequency ``f0`` and optional linear sweep ``f0dot``."""
        phi = np.zeros(L_phi)
        phi[0] = 2 * np.pi * f0
        if L_phi > 1:
            phi[1] = 2 * np.pi * f0dot
        return cls(phi)


@dataclass(frozen=True)
class AmplitudeParams:
    """Fourier-coefficient polynomials, stored block-wise by degree.

    Block ``l`` is ``[a_{0,l}, ..., a_{P,l}, b_{1,l}, ..., b_{P,l}]``.
    """

    coeffs: np.ndarray
    P: int
    L: int

    def __post_init__(self):
        c = _frozen(np.ravel(self.coeffs))
        if c.size != (2 * self.P + 1) * (self.L + 1):
            raise ValueError(
                f"expected {(2 * self.P + 1) * (self.L + 1)} coefficients, got {c.size}")
        if not np.all(np.isfinite(c)):
            raise ValueError("amplitude coefficients must be finite")
        object.__setattr__(self, "coeffs", c)

    @property
    def blocks(self) -> np.ndarray:
        return self.coeffs.reshape(self.L + 1, 2 * self.P + 1)

    @property
    def a(self) -> np.ndarray:
        """Cosine coefficients, shape ``(P+1, L+1)``; row 0 is dc."""
        return self.blocks[:, : self.P + 1].T

    @property
    def b(self) -> np.ndarray:
        """Sine coefficients, shape ``(P, L+1)``; row ``p-1`` is harmonic p."""
        return self.blocks[:, self.P + 1:].T

    @classmethod
    def from_ab(cls, a, b) -> "AmplitudeParams":
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        if a.ndim == 1:
            a = a[:, None]
        if b.ndim == 1:
            b = b[:, None]
        P = b.shape[0]
        L = a.shape[1] - 1
        if a.shape != (P + 1, L + 1) or b.shape != (P, L + 1):
            raise ValueError("a must be (P+1, L+1) and b (P, L+1)")
        return cls(np.concatenate([a, b], axis=0).T.ravel(), P, L)

    @classmethod
    def zeros(cls, P: int, L: int) -> "AmplitudeParams":
        return cls(np.zeros((2 * P + 1) * (L + 1)), P, L)

    def scaled(self, alpha: float) -> "AmplitudeParams":
        return AmplitudeParams(alpha * self.coeffs, self.P, self.L)


@dataclass(frozen=True)
class WindowedFrame:
    samples: np.ndarray
    fs: float = 1.0
    t_center: float = 0.0

    def __post_init__(self):
        x = _frozen(np.ravel(self.samples))
        if x.size < 1:
            raise ValueError("empty frame")
        if not self.fs > 0:
            raise ValueError("fs must be positive")
        object.__setattr__(self, "samples", x)

    @property
    def N(self) -> int:
        return self.samples.size


@dataclass(frozen=True)
class FittedModel:
    """Parameters, harmonic part and residual of one analysed window."""

    config: ModelConfig
    phase: PhaseParams
    amps: AmplitudeParams
    s_hat: np.ndarray
    v_hat: np.ndarray
    iters: int = 0
    converged: bool = True
    fs: float = 1.0
    t_center: float = 0.0
    voiced: bool = True
    cost_history: tuple[float, ...] = field(default=(), repr=False)
    flags: tuple[str, ...] = ()

    @property
    def N(self) -> int:
        return self.s_hat.size

    @property
    def x(self) -> np.ndarray:
        return self.s_hat + self.v_hat


@dataclass(frozen=True)
class ContinuousParams:
    """Taylor coefficients in physical units.

    ``phase_derivs[l-1]`` is the l-th derivative of the common phase
    (rad/s**l); ``a_derivs``/``b_derivs`` have the layout of
    ``AmplitudeParams.a``/``.b`` in units/s**l.
    """

    phase_derivs: np.ndarray
    a_derivs: np.ndarray
    b_derivs: np.ndarray

    @property
    def F0(self) -> float:
        """Fundamental frequency at the window centre (Hz)."""
        return float(self.phase_derivs[0] / (2 * np.pi))

    @property
    def F0dot(self) -> float:
        """Rate of F0 change at the window centre (Hz/s)."""
        if self.phase_derivs.size < 2:
            return 0.0
        return float(self.phase_derivs[1] / (2 * np.pi))


def taylor_basis(ell: int, t):
    """``t**ell / ell!``."""
    if ell < 0:
        raise ValueError("ell must be non-negative")
    return np.power(t, ell) / math.factorial(ell)


def basis_matrix(N: int, degree: int) -> np.ndarray:
    """Rows ``h_0 .. h_degree`` evaluated at ``n - n0`` for ``n = 0..N-1``."""
    if N < 1:
        raise ValueError("N must be >= 1")
    t = np.arange(N) - (N - 1) / 2.0
    H = np.empty((degree + 1, N))
    H[0] = 1.0
    for ell in range(1, degree + 1):
        H[ell] = H[ell - 1] * t / ell
    return H


def common_phase_track(phase: PhaseParams, N: int) -> np.ndarray:
    H = basis_matrix(N, phase.L_phi)
    return phase.phi @ H[1:]


def f0_track(phase: PhaseParams, N: int) -> np.ndarray:
    """Normalized instantaneous fundamental frequency (cycles/sample)."""
    H = basis_matrix(N, phase.L_phi)
    return phase.phi @ H[:-1] / (2 * np.pi)


def f0dot_track(phase: PhaseParams, N: int) -> np.ndarray:
    """Rate of normalized f0 change (cycles/sample**2)."""
    if phase.L_phi < 2:
        return np.zeros(N)
    H = basis_matrix(N, phase.L_phi)
    return phase.phi[1:] @ H[:-2] / (2 * np.pi)


def amplitude_tracks(amps: AmplitudeParams, N: int) -> tuple[np.ndarray, np.ndarray]:
    """Return ``a`` of shape ``(P+1, N)`` and ``b`` of shape ``(P, N)``."""
    H = basis_matrix(N, amps.L)
    return amps.a @ H, amps.b @ H


def rate_tracks(phase: PhaseParams, amps: AmplitudeParams, N: int):
    """Analytic per-sample derivatives of the f0, a and b tracks."""
    H = basis_matrix(N, max(amps.L, 1))
    if amps.L == 0:
        adot = np.zeros((amps.P + 1, N))
        bdot = np.zeros((amps.P, N))
    else:
        adot = amps.a[:, 1:] @ H[: amps.L]
        bdot = amps.b[:, 1:] @ H[: amps.L]
    return f0dot_track(phase, N), adot, bdot


def _synth_from_tracks(phi_n, a, b) -> np.ndarray:
    P = b.shape[0]
    arg = np.arange(1, P + 1)[:, None] * phi_n[None, :]
    return 0.5 * a[0] + np.sum(a[1:] * np.cos(arg) + b * np.sin(arg), axis=0)


def synthesize(phase: PhaseParams, amps: AmplitudeParams, N: int) -> np.ndarray:
    phi_n = common_phase_track(phase, N)
    a, b = amplitude_tracks(amps, N)
    return _synth_from_tracks(phi_n, a, b)


def to_continuous(fitted: FittedModel) -> ContinuousParams:
    fs = float(fitted.fs)
    phi = fitted.phase.phi
    phase_scale = fs ** np.arange(1, phi.size + 1)
    amp_scale = fs ** np.arange(fitted.amps.L + 1)
    return ContinuousParams(
        phase_derivs=phi * phase_scale,
        a_derivs=fitted.amps.a * amp_scale,
        b_derivs=fitted.amps.b * amp_scale,
    )


def mag_phase(amps: AmplitudeParams, n: int, N: int) -> tuple[np.ndarray, np.ndarray]:
    """Magnitude ``A_p`` and phase ``Phi_p`` of harmonics ``1..P`` at sample ``n``."""
    if not 0 <= n < N:
        raise IndexError(f"sample {n} outside window of {N}")
    a, b = amplitude_tracks(amps, N)
    an, bn = a[1:, n], b[:, n]
    return np.hypot(an, bn), np.arctan2(bn, an)
