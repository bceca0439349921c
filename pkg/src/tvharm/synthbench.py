"""Synthetic harmonic test signals and Monte Carlo HNR sweeps."""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.signal import lfilter

from .estimator import FitOptions, fit
from .measures import hnr_overall
from .model import AmplitudeParams, ModelConfig, PhaseParams, WindowedFrame

__all__ = [
    "SynthSpec",
    "SweepResult",
    "fill_spectrum_P",
    "harmonic_magnitudes",
    "synth_truth",
    "synth_signal",
    "run_sweep",
    "DEFAULT_AXES",
]

DEFAULT_AXES = {
    # Hz/s
    "f0dot": (0.0, 1.0, 3.0, 10.0, 30.0, 100.0, 300.0, 500.0),
    # seconds; LFM cases need T < 0.6 s to keep F0 positive
    "window": (0.01, 0.02, 0.05, 0.1, 0.2, 0.3, 0.5),
    # Hz
    "f0": (75.0, 100.0, 150.0, 200.0, 300.0, 400.0),
    # dB
    "hnr": (0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0),
}


def fill_spectrum_P(f0_max: float) -> int:
    """Largest harmonic count keeping ``P * f0_max`` strictly below Nyquist."""
    if not 0 < f0_max < 0.5:
        raise ValueError(f"normalized f0 {f0_max} outside (0, 0.5)")
    return max(1, math.ceil(0.5 / f0_max) - 1)


@dataclass(frozen=True)
class SynthSpec:
    """One synthetic test window.

    The fundamental is ``f0_norm + f0dot_norm * (n - n0)`` cycles/sample
    with ``n0`` the window centre. Harmonic magnitudes follow
    ``amplitude_law`` (``"geometric"``: ``2**(1-p)``, ``"inverse"``: ``1/p``)
    scaled to unit total harmonic power. ``tract_ar`` optionally colours
    harmonics and noise with the all-pole filter ``1 / (1 + a1 z^-1 + ...)``.
    """

    fs: float = 5000.0
    n_samples: int = 250
    f0_norm: float = 0.03
    f0dot_norm: float = 0.0
    P: Optional[int] = None
    amplitude_law: str = "geometric"
    phase_seed: int = 0
    noise_var: float = 0.01
    noise_seed: int = 1
    tract_ar: Optional[tuple[float, ...]] = None

    def f0_range(self) -> tuple[float, float]:
        half = (self.n_samples - 1) / 2.0
        ends = (self.f0_norm - self.f0dot_norm * half, self.f0_norm + self.f0dot_norm * half)
        return min(ends), max(ends)

    @property
    def n_harmonics(self) -> int:
        return fill_spectrum_P(self.f0_range()[1]) if self.P is None else self.P

    def validate(self) -> None:
        lo, hi = self.f0_range()
        if lo <= 0:
            raise ValueError(f"instantaneous f0 reaches {lo:g} <= 0")
        if self.n_harmonics * hi >= 0.5:
            raise ValueError(
                f"harmonic {self.n_harmonics} reaches {self.n_harmonics * hi:g} >= Nyquist")
        if self.amplitude_law not in ("geometric", "inverse"):
            raise ValueError(f"unknown amplitude law {self.amplitude_law!r}")
        if self.noise_var < 0 or self.n_samples < 1 or self.fs <= 0:
            raise ValueError("invalid noise variance, length or rate")


def harmonic_magnitudes(P: int, law: str = "geometric") -> np.ndarray:
    """``A_p`` for ``p = 1..P`` normalized so ``sum(A_p**2 / 2) == 1``."""
    p = np.arange(1, P + 1)
    raw = 2.0 ** (1 - p) if law == "geometric" else 1.0 / p
    alpha = np.sqrt(np.sum(raw ** 2) / 2)
    return raw / alpha


def synth_truth(spec: SynthSpec) -> tuple[PhaseParams, AmplitudeParams]:
    """True model parameters of the (unfiltered) harmonic part."""
    spec.validate()
    P = spec.n_harmonics
    A = harmonic_magnitudes(P, spec.amplitude_law)
    Phi = np.random.default_rng(spec.phase_seed).uniform(0, 2 * np.pi, P)
    amps = AmplitudeParams.from_ab(np.concatenate([[0.0], A * np.cos(Phi)]), A * np.sin(Phi))
    phase = PhaseParams([2 * np.pi * spec.f0_norm, 2 * np.pi * spec.f0dot_norm])
    return phase, amps


def synth_signal(spec: SynthSpec, return_parts: bool = False):
    """Render the window; deterministic given the seeds.

    With ``return_parts`` the harmonic and noise components are returned
    as well (after any tract filtering).
    """
    phase, amps = synth_truth(spec)
    N = spec.n_samples
    # lead-in so the tract filter has settled inside the window
    lead = 0 if spec.tract_ar is None else max(50 * len(spec.tract_ar), 1000)
    t = np.arange(-lead, N) - (N - 1) / 2.0
    phi_n = phase.phi[0] * t + phase.phi[1] * t * t / 2
    p = np.arange(1, amps.P + 1)[:, None]
    arg = p * phi_n[None, :]
    s = np.sum(amps.a[1:] * np.cos(arg) + amps.b * np.sin(arg), axis=0)
    rng = np.random.default_rng(spec.noise_seed)
    w = rng.normal(0.0, np.sqrt(spec.noise_var), size=t.size)
    if spec.tract_ar is not None:
        den = np.concatenate([[1.0], np.asarray(spec.tract_ar, dtype=float)])
        s = lfilter([1.0], den, s)
        w = lfilter([1.0], den, w)
    s, w = s[lead:], w[lead:]
    x = s + w
    if return_parts:
        return x, s, w
    return x


@dataclass
class SweepResult:
    """Per-realization HNRs of a sweep; ``hnr_db[i, j, r]`` is axis point i,
    config j, realization r (NaN where the fit failed)."""

    kind: str
    axis: tuple[float, ...]
    configs: tuple[tuple[int, int], ...]
    hnr_db: np.ndarray
    iters: np.ndarray
    converged: np.ndarray
    monotone: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def realizations(self) -> int:
        return self.hnr_db.shape[2]

    def counts(self) -> np.ndarray:
        return np.sum(np.isfinite(self.hnr_db), axis=2)

    def mean(self) -> np.ndarray:
        """Mean HNR in dB over successful realizations, shape (axis, config)."""
        with np.errstate(invalid="ignore"):
            return np.nanmean(self.hnr_db, axis=2)

    def std(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            return np.nanstd(self.hnr_db, axis=2)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["axis", "config", "realization", "hnr_db"])
            for i, ax in enumerate(self.axis):
                for j, (lp, l) in enumerate(self.configs):
                    for r in range(self.realizations):
                        v = self.hnr_db[i, j, r]
                        w.writerow([repr(float(ax)), f"HM{lp},{l}", r,
                                    repr(float(v)) if np.isfinite(v) else ""])

    def summary(self) -> dict:
        return {
            "schema_version": 1,
            "kind": self.kind,
            "axis": [float(a) for a in self.axis],
            "configs": [f"HM{lp},{l}" for lp, l in self.configs],
            "realizations": self.realizations,
            "mean_hnr_db": _nan_to_none(self.mean()),
            "std_hnr_db": _nan_to_none(self.std()),
            "counts": self.counts().tolist(),
            "converged_fraction": np.mean(self.converged, axis=2).tolist(),
            "meta": self.meta,
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2)


def _nan_to_none(arr: np.ndarray):
    return [[None if not np.isfinite(v) else float(v) for v in row] for row in arr]


def _point_spec(kind: str, value: float, base: SynthSpec) -> SynthSpec:
    fs = base.fs
    if kind == "f0dot":
        return replace(base, f0dot_norm=value / fs ** 2)
    if kind == "window":
        return replace(base, n_samples=int(round(value * fs)))
    if kind == "f0":
        return replace(base, f0_norm=value / fs)
    if kind == "hnr":
        return replace(base, noise_var=10.0 ** (-value / 10.0))
    raise ValueError(f"unknown sweep kind {kind!r}")


def _run_point(args):
    kind, i, value, base, configs, realizations, seed = args
    spec = _point_spec(kind, value, base)
    P = spec.n_harmonics
    out = np.full((len(configs), realizations), np.nan)
    iters = np.zeros((len(configs), realizations), dtype=int)
    conv = np.zeros((len(configs), realizations), dtype=bool)
    mono = np.zeros((len(configs), realizations), dtype=bool)
    for r in range(realizations):
        ss = np.random.SeedSequence([seed, i, r])
        phase_seed, noise_seed = (int(v) for v in ss.generate_state(2))
        x = synth_signal(replace(spec, phase_seed=phase_seed, noise_seed=noise_seed))
        frame = WindowedFrame(x, spec.fs)
        for j, (L_phi, L) in enumerate(configs):
            try:
                m = fit(frame, ModelConfig(P, L_phi, L), FitOptions(init_f0=spec.f0_norm))
            except (ValueError, np.linalg.LinAlgError, RuntimeError):
                continue
            out[j, r] = hnr_overall(m)
            iters[j, r] = m.iters
            conv[j, r] = m.converged
            hist = np.asarray(m.cost_history)
            mono[j, r] = bool(np.all(np.diff(hist) <= 1e-12 * hist[:-1]))
    return i, out, iters, conv, mono


def run_sweep(kind: str, configs: Sequence[tuple[int, int]] = ((2, 0), (1, 0)),
              realizations: int = 200, seed: int = 0,
              axis: Optional[Sequence[float]] = None,
              base: Optional[SynthSpec] = None, n_jobs: int = 1) -> SweepResult:
    """Monte Carlo HNR estimates along one axis of the synthetic design.

    ``kind`` selects the swept quantity: ``f0dot`` (Hz/s), ``window`` (s),
    ``f0`` (Hz) or ``hnr`` (dB). Every realization draws harmonic phases
    and noise from seeds derived from ``(seed, point, realization)``, and
    all configs are fitted to the same signal, initialized at the true
    centre f0.
    """
    if realizations < 1:
        raise ValueError("realizations must be >= 1")
    if kind not in DEFAULT_AXES:
        raise ValueError(f"unknown sweep kind {kind!r}")
    base = base or SynthSpec()
    axis = tuple(float(v) for v in (DEFAULT_AXES[kind] if axis is None else axis))
    configs = tuple((int(a), int(b)) for a, b in configs)
    shape = (len(axis), len(configs), realizations)
    hnr = np.full(shape, np.nan)
    iters = np.zeros(shape, dtype=int)
    conv = np.zeros(shape, dtype=bool)
    mono = np.zeros(shape, dtype=bool)
    tasks = [(kind, i, v, base, configs, realizations, seed) for i, v in enumerate(axis)]
    if n_jobs == 1:
        results = map(_run_point, tasks)
    else:
        pool = ProcessPoolExecutor(max_workers=n_jobs)
        results = pool.map(_run_point, tasks)
    for i, out, it, cv, mo in results:
        hnr[i], iters[i], conv[i], mono[i] = out, it, cv, mo
    if n_jobs != 1:
        pool.shutdown()
    meta = {"seed": seed, "base": asdict(base)}
    return SweepResult(kind, axis, configs, hnr, iters, conv, mono, meta)
