"""Voice measures derived from a fitted harmonic model."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .model import FittedModel, amplitude_tracks, f0_track, rate_tracks

__all__ = [
    "MeasureSet",
    "ResidualSpectrum",
    "harmonic_power",
    "harmonic_powers",
    "hnr_overall",
    "residual_spectrum",
    "band_bins",
    "hnr_band",
    "per_harmonic_hnr",
    "mean_f0",
    "rate_measures",
    "compute_measures",
]


@dataclass(frozen=True)
class ResidualSpectrum:
    """DFT of the residual; ``fs`` and ``N`` are kept for bin bookkeeping."""

    K: int
    bins: np.ndarray
    fs: float
    N: int


@dataclass(frozen=True)
class MeasureSet:
    hnr_db: float
    mean_f0_hz: Optional[float]
    harmonic_powers: tuple[float, ...]
    hnr_bands: tuple[tuple[tuple[float, float], float], ...] = ()
    per_harmonic_hnr_db: tuple[float, ...] = ()
    f0dot_extreme_hz_s: Optional[float] = None
    f0dot_rms_hz_s: Optional[float] = None
    psdot_extreme_per_s: Optional[float] = None
    psdot_rms_per_s: Optional[float] = None
    flags: tuple[str, ...] = field(default=())


def _signed_extreme(v: np.ndarray) -> float:
    return float(v[np.argmax(np.abs(v))])


def harmonic_powers(fitted: FittedModel) -> np.ndarray:
    """``H_p`` for ``p = 1..P``; the dc term is excluded."""
    a, b = amplitude_tracks(fitted.amps, fitted.N)
    return (np.sum(a[1:] ** 2, axis=1) + np.sum(b ** 2, axis=1)) / (2 * fitted.N)


def harmonic_power(fitted: FittedModel, p: int) -> float:
    """Mean power of harmonic ``p`` over the window: ``sum(a**2 + b**2) / 2N``."""
    if not 1 <= p <= fitted.amps.P:
        raise ValueError(f"harmonic {p} outside 1..{fitted.amps.P}")
    a, b = amplitude_tracks(fitted.amps, fitted.N)
    return float((a[p] @ a[p] + b[p - 1] @ b[p - 1]) / (2 * fitted.N))


def _db(ratio: float) -> float:
    with np.errstate(divide="ignore"):
        return float(10 * np.log10(ratio))


def hnr_overall(fitted: FittedModel) -> float:
    """Total harmonic power over the residual variance, in dB.

    The variance is the mean-removed, divide-by-N sample variance. A
    residual with zero variance gives ``+inf``.
    """
    var = float(np.var(fitted.v_hat))
    ps = float(np.sum(harmonic_powers(fitted)))
    if var == 0.0:
        return float("inf")
    return _db(ps / var)


def residual_spectrum(fitted: FittedModel, K: Optional[int] = None,
                      taper: Optional[np.ndarray] = None) -> ResidualSpectrum:
    """K-point DFT of the residual, rectangular window unless ``taper`` given."""
    N = fitted.N
    K = N if K is None else int(K)
    if K < N:
        raise ValueError(f"DFT length {K} shorter than window {N}")
    v = fitted.v_hat if taper is None else fitted.v_hat * taper
    return ResidualSpectrum(K=K, bins=np.fft.fft(v, K), fs=fitted.fs, N=N)


def _in_band(f, band, inclusive):
    lo, hi = band
    if inclusive:
        return (f >= lo) & (f <= hi)
    return (f > lo) & (f < hi)


def band_bins(K: int, fs: float, band: tuple[float, float],
              inclusive: bool = True) -> np.ndarray:
    """DFT bin indices covering ``band`` on both sides of the spectrum.

    Each positive-frequency bin in the band brings its mirror ``K - k``;
    dc and Nyquist appear once.
    """
    k = np.arange(K // 2 + 1)
    sel = k[_in_band(k * fs / K, band, inclusive)]
    mirror = K - sel[(sel > 0) & (2 * sel != K)]
    return np.concatenate([sel, mirror])


def hnr_band(fitted: FittedModel, spectrum: ResidualSpectrum,
             band: tuple[float, float], inclusive: bool = True) -> float:
    """Band-limited HNR in dB.

    Harmonics are assigned to the band by ``p * mean_f0``; noise power is
    read from the residual DFT bins of the band (both spectrum halves), so
    ``band = (0, fs/2)`` reproduces :func:`hnr_overall` for a zero-mean
    residual. No harmonic in the band gives ``-inf``.
    """
    lo, hi = band
    if not 0 <= lo < hi:
        raise ValueError(f"invalid band {band}")
    kk = band_bins(spectrum.K, spectrum.fs, band, inclusive)
    if kk.size == 0:
        raise ValueError(f"band {band} contains no DFT bin")
    noise = float(np.sum(np.abs(spectrum.bins[kk]) ** 2))
    F0 = mean_f0(fitted)
    Hp = harmonic_powers(fitted)
    if F0 is None:
        return float("-inf")
    p = np.arange(1, Hp.size + 1)
    ps = float(np.sum(Hp[_in_band(p * F0, band, inclusive)]))
    if ps == 0.0:
        return float("-inf")
    if noise == 0.0:
        return float("inf")
    return _db(spectrum.N * spectrum.K * ps / noise)


def per_harmonic_hnr(fitted: FittedModel, spectrum: ResidualSpectrum, p: int):
    """HNR of the open band ``((p - 1/2) F0, (p + 1/2) F0)``.

    Returns ``(hnr_db, truncated)``; ``truncated`` is set when the band was
    cut at Nyquist.
    """
    if not 1 <= p <= fitted.amps.P:
        raise ValueError(f"harmonic {p} outside 1..{fitted.amps.P}")
    F0 = mean_f0(fitted)
    if F0 is None:
        return float("-inf"), False
    hi = (p + 0.5) * F0
    truncated = hi > fitted.fs / 2
    band = ((p - 0.5) * F0, min(hi, fitted.fs / 2))
    if band[0] >= band[1]:
        return float("-inf"), True
    if fitted.amps.a[p].any() or fitted.amps.b[p - 1].any():
        return hnr_band(fitted, spectrum, band, inclusive=False), truncated
    return float("-inf"), truncated


def mean_f0(fitted: FittedModel) -> Optional[float]:
    """Window-average fundamental frequency in Hz (None when unvoiced)."""
    if not fitted.voiced:
        return None
    return float(fitted.fs * np.mean(f0_track(fitted.phase, fitted.N)))


def rate_measures(fitted: FittedModel) -> dict:
    """rms and signed most-extreme values of dF0/dt (Hz/s) and dPs/dt (1/s)."""
    N, fs = fitted.N, fitted.fs
    f0dot, adot, bdot = rate_tracks(fitted.phase, fitted.amps, N)
    a, b = amplitude_tracks(fitted.amps, N)
    F0dot = fs ** 2 * f0dot
    Hdot = fs * (a[1:] * adot[1:] + b * bdot)
    Psdot = Hdot.sum(axis=0)
    return {
        "f0dot_track": F0dot,
        "psdot_track": Psdot,
        "f0dot_extreme": _signed_extreme(F0dot),
        "f0dot_rms": float(np.sqrt(np.mean(F0dot ** 2))),
        "psdot_extreme": _signed_extreme(Psdot),
        "psdot_rms": float(np.sqrt(np.mean(Psdot ** 2))),
    }


def compute_measures(fitted: FittedModel, bands: Sequence[tuple[float, float]] = (),
                     n_per_harmonic: int = 0, K: Optional[int] = None,
                     rates: bool = True) -> MeasureSet:
    """Bundle the HNR family, mean F0 and rate statistics of one fit."""
    flags = []
    Hp = harmonic_powers(fitted)
    hnr = hnr_overall(fitted)
    if np.isinf(hnr):
        flags.append("zero_residual")
    F0 = mean_f0(fitted)
    spectrum = residual_spectrum(fitted, K) if (bands or n_per_harmonic) else None
    band_vals = []
    for band in bands:
        val = hnr_band(fitted, spectrum, band)
        if val == float("-inf"):
            flags.append("empty_band")
        band_vals.append(((float(band[0]), float(band[1])), val))
    ph = []
    for p in range(1, min(n_per_harmonic, fitted.amps.P) + 1):
        val, trunc = per_harmonic_hnr(fitted, spectrum, p)
        if trunc:
            flags.append(f"band_truncated_h{p}")
        ph.append(val)
    r = rate_measures(fitted) if (rates and fitted.voiced) else None
    return MeasureSet(
        hnr_db=hnr,
        mean_f0_hz=F0,
        harmonic_powers=tuple(float(h) for h in Hp),
        hnr_bands=tuple(band_vals),
        per_harmonic_hnr_db=tuple(ph),
        f0dot_extreme_hz_s=None if r is None else r["f0dot_extreme"],
        f0dot_rms_hz_s=None if r is None else r["f0dot_rms"],
        psdot_extreme_per_s=None if r is None else r["psdot_extreme"],
        psdot_rms_per_s=None if r is None else r["psdot_rms"],
        flags=tuple(flags),
    )
