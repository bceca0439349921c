"""All-pole vocal-tract estimate from the model residual.

The residual of a good harmonic fit is mostly turbulent noise shaped by the
vocal tract, so an AR model of it approximates the tract filter. Removing
that filter's response from the harmonic powers leaves the source spectrum.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .measures import MeasureSet, harmonic_powers, mean_f0
from .model import FittedModel

__all__ = [
    "ArModel",
    "SourceSpectrum",
    "DegenerateSignalError",
    "burg_ar",
    "ar_gain_db",
    "adjust_harmonic_powers",
    "spectral_tilt",
    "average_source_spectra",
]


class DegenerateSignalError(ValueError):
    """Input cannot support the requested AR model (zero or perfectly predictable)."""


@dataclass(frozen=True)
class ArModel:
    """``gain / A(z)`` with ``A(z) = 1 + a_1 z^-1 + ... + a_p z^-p``."""

    order: int
    coefficients: np.ndarray
    gain: float
    reflection: Optional[np.ndarray] = None

    def poles(self) -> np.ndarray:
        return np.roots(np.concatenate([[1.0], self.coefficients]))


@dataclass(frozen=True)
class SourceSpectrum:
    freqs_hz: np.ndarray
    raw_db: np.ndarray
    adjusted_db: np.ndarray
    tilt_db_per_octave: Optional[float]
    raw_tilt_db_per_octave: Optional[float]


def burg_ar(residual, order: int = 16, saturation: float = 1e-6) -> ArModel:
    """Burg estimate of an AR(order) model.

    Each stage picks the reflection coefficient minimizing the summed
    forward and backward prediction error power, so the model is always
    minimum phase. Raises :class:`DegenerateSignalError` when a reflection
    coefficient comes within ``saturation`` of unit magnitude (the signal
    is exactly predictable, e.g. a pure tone or a short-period pulse train).
    """
    x = np.asarray(residual, dtype=float).ravel()
    N = x.size
    if order < 1:
        raise ValueError("order must be >= 1")
    if N <= 2 * order:
        raise ValueError(f"{N} samples too few for AR({order})")
    energy = float(x @ x)
    if energy == 0.0:
        raise DegenerateSignalError("all-zero input")
    f = x.copy()
    b = x.copy()
    a = np.array([1.0])
    err = energy / N
    refl = np.empty(order)
    for m in range(order):
        ef = f[m + 1:]
        eb = b[m: N - 1]
        den = ef @ ef + eb @ eb
        if den <= 1e-300 * energy:
            raise DegenerateSignalError(f"prediction error vanished at stage {m + 1}")
        k = -2.0 * (ef @ eb) / den
        if abs(k) >= 1.0 - saturation:
            raise DegenerateSignalError(
                f"reflection coefficient {k:.12f} saturated at stage {m + 1}")
        f_new = ef + k * eb
        b_new = eb + k * ef
        f[m + 1:] = f_new
        b[m + 1:] = b_new
        ext = np.concatenate([a, [0.0]])
        a = ext + k * ext[::-1]
        err *= 1.0 - k * k
        refl[m] = k
    return ArModel(order=order, coefficients=a[1:], gain=float(np.sqrt(err)),
                   reflection=refl)


def ar_gain_db(model: ArModel, f_hz, fs: float):
    """Magnitude response of ``gain / A`` in dB at ``f_hz``."""
    w = 2 * np.pi * np.asarray(f_hz, dtype=float) / fs
    k = np.arange(1, model.order + 1)
    A = 1.0 + np.exp(-1j * np.multiply.outer(w, k)) @ np.asarray(model.coefficients)
    out = 20 * np.log10(model.gain / np.abs(A))
    return float(out) if np.ndim(out) == 0 else out


def spectral_tilt(freqs_hz, power_db) -> Optional[float]:
    """Least-squares slope of power (dB) against log2 frequency: dB/octave."""
    freqs_hz = np.asarray(freqs_hz, dtype=float)
    power_db = np.asarray(power_db, dtype=float)
    ok = np.isfinite(power_db) & (freqs_hz > 0)
    if ok.sum() < 3:
        return None
    return float(np.polyfit(np.log2(freqs_hz[ok]), power_db[ok], 1)[0])


def adjust_harmonic_powers(fitted: FittedModel, measures: Optional[MeasureSet],
                           model: ArModel, floor_db: float = -60.0) -> SourceSpectrum:
    """Subtract the AR response at each harmonic from its power.

    Harmonics more than ``-floor_db`` below the strongest are left out of
    the tilt fits (but still reported).
    """
    if measures is not None and measures.mean_f0_hz is not None:
        F0 = measures.mean_f0_hz
        Hp = np.asarray(measures.harmonic_powers)
    else:
        F0 = mean_f0(fitted)
        Hp = harmonic_powers(fitted)
    if F0 is None:
        raise ValueError("unvoiced model has no harmonics to adjust")
    freqs = F0 * np.arange(1, Hp.size + 1)
    with np.errstate(divide="ignore"):
        raw = 10 * np.log10(Hp)
    adjusted = raw - ar_gain_db(model, freqs, fitted.fs)
    usable = np.isfinite(raw) & (raw >= np.max(raw) + floor_db)
    return SourceSpectrum(
        freqs_hz=freqs,
        raw_db=raw,
        adjusted_db=adjusted,
        tilt_db_per_octave=spectral_tilt(freqs[usable], adjusted[usable]),
        raw_tilt_db_per_octave=spectral_tilt(freqs[usable], raw[usable]),
    )


def average_source_spectra(spectra: Sequence[SourceSpectrum]) -> SourceSpectrum:
    """dB-domain average over windows with the same harmonic count."""
    if not spectra:
        raise ValueError("nothing to average")
    P = min(s.raw_db.size for s in spectra)
    freqs = np.mean([s.freqs_hz[:P] for s in spectra], axis=0)
    raw = np.mean([s.raw_db[:P] for s in spectra], axis=0)
    adj = np.mean([s.adjusted_db[:P] for s in spectra], axis=0)
    usable = np.isfinite(raw)
    return SourceSpectrum(
        freqs_hz=freqs,
        raw_db=raw,
        adjusted_db=adj,
        tilt_db_per_octave=spectral_tilt(freqs[usable], adj[usable]),
        raw_tilt_db_per_octave=spectral_tilt(freqs[usable], raw[usable]),
    )
