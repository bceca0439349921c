"""Sliding-window analysis of audio files."""
from __future__ import annotations

import csv
import json
import logging
import math
import struct
import warnings
from dataclasses import asdict, dataclass, field, fields
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.io import wavfile
from scipy.signal import firwin, kaiserord, resample_poly

from .estimator import FitOptions, UnvoicedError, fit, init_f0_autocorrelation
from .measures import MeasureSet, compute_measures
from .model import ModelConfig, WindowedFrame, f0_track
from .vocaltract import DegenerateSignalError, adjust_harmonic_powers, burg_ar

__all__ = [
    "WavFormatError",
    "PipelineConfig",
    "AnalysisRecord",
    "read_wav",
    "write_wav",
    "resample_to",
    "fill_spectrum_harmonics",
    "analyze_signal",
    "analyze_file",
    "record_count",
    "write_outputs",
    "load_records_json",
    "CSV_COLUMNS",
    "SCHEMA_VERSION",
]

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
MEASURE_CHOICES = ("hnr", "band-hnr", "rates", "tilt")


class WavFormatError(ValueError):
    """Malformed or unsupported WAV input."""


# ---------------------------------------------------------------------------
# audio I/O


def _check_riff(data: bytes) -> dict:
    """Walk the RIFF chunk list and return the parsed ``fmt `` fields."""
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise WavFormatError("not a RIFF/WAVE file (bad header at offset 0)")
    off = 12
    fmt = None
    data_size = None
    while off < len(data):
        if off + 8 > len(data):
            raise WavFormatError(f"truncated chunk header at offset {off}")
        cid = data[off: off + 4]
        size = struct.unpack("<I", data[off + 4: off + 8])[0]
        body = off + 8
        if body + size > len(data):
            raise WavFormatError(
                f"chunk {cid.decode('latin-1')!r} at offset {off} declares {size} bytes "
                f"but only {len(data) - body} remain")
        if cid == b"fmt ":
            if size < 16:
                raise WavFormatError(f"fmt chunk at offset {off} too short ({size} bytes)")
            tag, channels, rate, _, align, bits = struct.unpack("<HHIIHH", data[body: body + 16])
            if tag == 0xFFFE and size >= 26:
                tag = struct.unpack("<H", data[body + 24: body + 26])[0]
            fmt = dict(tag=tag, channels=channels, rate=rate, align=align, bits=bits)
        elif cid == b"data":
            data_size = size
        off = body + size + (size & 1)
    if fmt is None:
        raise WavFormatError("missing fmt chunk")
    if data_size is None:
        raise WavFormatError("missing data chunk")
    if fmt["tag"] not in (1, 3):
        raise WavFormatError(f"unsupported codec (format tag {fmt['tag']:#x})")
    if fmt["tag"] == 1 and fmt["bits"] not in (8, 16, 24, 32):
        raise WavFormatError(f"unsupported PCM width {fmt['bits']} bits")
    if fmt["tag"] == 3 and fmt["bits"] not in (32, 64):
        raise WavFormatError(f"unsupported float width {fmt['bits']} bits")
    if data_size == 0:
        raise WavFormatError("zero-length audio")
    return fmt


def read_wav(path) -> tuple[np.ndarray, float]:
    """Read a PCM or float WAV file as float samples in [-1, 1].

    Multichannel files yield their first channel with a warning.
    """
    raw = Path(path).read_bytes()
    fmt = _check_riff(raw)
    try:
        fs, x = wavfile.read(path)
    except ValueError as exc:
        raise WavFormatError(str(exc)) from exc
    if x.ndim > 1:
        warnings.warn(f"{path}: {x.shape[1]} channels, using the first", stacklevel=2)
        x = x[:, 0]
    if x.size == 0:
        raise WavFormatError("zero-length audio")
    if x.dtype == np.uint8:
        y = (x.astype(float) - 128.0) / 128.0
    elif np.issubdtype(x.dtype, np.integer):
        y = x.astype(float) / float(2 ** (8 * x.dtype.itemsize - 1))
    else:
        y = x.astype(float)
    log.debug("read %s: %d samples at %d S/s (%d-bit)", path, y.size, fs, fmt["bits"])
    return y, float(fs)


def write_wav(path, samples, fs: float, pcm16: bool = False) -> None:
    """Write mono audio as 32-bit float (default) or 16-bit PCM."""
    x = np.asarray(samples, dtype=float)
    if pcm16:
        if np.max(np.abs(x)) > 1.0:
            raise ValueError("samples exceed full scale for 16-bit PCM")
        data = np.clip(np.round(x * 32768.0), -32768, 32767).astype(np.int16)
    else:
        data = x.astype(np.float32)
    wavfile.write(path, int(round(fs)), data)


def resample_to(samples, fs_in: float, fs_out: float) -> np.ndarray:
    """Anti-aliased rational rate conversion.

    Kaiser-window lowpass with >= 80 dB stopband starting at the new
    Nyquist and passband up to ``0.45 * fs_out``, applied polyphase.
    """
    x = np.asarray(samples, dtype=float)
    if fs_out > fs_in:
        raise ValueError(f"cannot upsample {fs_in} -> {fs_out}")
    if fs_out == fs_in:
        return x.copy()
    ratio = Fraction(fs_out / fs_in).limit_denominator(100000)
    up, down = ratio.numerator, ratio.denominator
    fs_up = fs_in * up
    width = 0.05 * fs_out / (fs_up / 2)
    numtaps, beta = kaiserord(85.0, width)
    numtaps |= 1
    h = firwin(numtaps, 0.475 * fs_out, window=("kaiser", beta), fs=fs_up)
    return resample_poly(x, up, down, window=h)


# ---------------------------------------------------------------------------
# analysis


@dataclass(frozen=True)
class PipelineConfig:
    """Sliding-window analysis settings.

    ``P=None`` selects the fill-spectrum policy: as many harmonics as fit
    below Nyquist with one F0 of guard band, decided per window.
    """

    target_fs: float = 8000.0
    window_s: float = 0.05
    hop_s: float = 0.01
    L_phi: int = 2
    L: int = 1
    P: Optional[int] = None
    f0_min_hz: float = 60.0
    f0_max_hz: float = 500.0
    measures: tuple[str, ...] = ("hnr", "rates")
    n_per_harmonic: int = 3
    ar_order: int = 16
    warm_start: bool = True
    voicing_threshold: float = 0.3
    rho: float = 1e-10
    max_iters: int = 50

    def __post_init__(self):
        if self.hop_s <= 0 or self.window_s <= 0 or self.hop_s > self.window_s:
            raise ValueError("need 0 < hop_s <= window_s")
        if not 0 < self.f0_min_hz < self.f0_max_hz < self.target_fs / 2:
            raise ValueError("need 0 < f0_min_hz < f0_max_hz < target_fs/2")
        bad = set(self.measures) - set(MEASURE_CHOICES)
        if bad:
            raise ValueError(f"unknown measures {sorted(bad)}")
        if self.P is not None and self.P < 1:
            raise ValueError("P must be positive")


@dataclass
class AnalysisRecord:
    t_center_s: float
    voiced: bool
    status: str
    f0_init_hz: Optional[float] = None
    n_harmonics: Optional[int] = None
    iters: Optional[int] = None
    converged: Optional[bool] = None
    measures: Optional[MeasureSet] = None
    tilt_db_per_octave: Optional[float] = None
    raw_tilt_db_per_octave: Optional[float] = None
    flags: tuple[str, ...] = field(default=())


def fill_spectrum_harmonics(f0_norm: float) -> int:
    """Harmonic count leaving one f0 of guard band below Nyquist."""
    return max(1, int(math.floor((0.5 - f0_norm) / f0_norm)))


def record_count(n_samples: int, frame_len: int, hop: int) -> int:
    if n_samples < frame_len:
        return 0
    return (n_samples - frame_len) // hop + 1


def _analyze_frame(frame: WindowedFrame, cfg: PipelineConfig,
                   prev_f0_hz: Optional[float]) -> AnalysisRecord:
    fs = frame.fs
    band = (cfg.f0_min_hz / fs, cfg.f0_max_hz / fs)
    try:
        f0 = init_f0_autocorrelation(frame, band, cfg.voicing_threshold)
    except UnvoicedError:
        return AnalysisRecord(frame.t_center, voiced=False, status="unvoiced")
    except ValueError as exc:
        log.info("window at %.3f s failed: %s", frame.t_center, exc)
        return AnalysisRecord(frame.t_center, voiced=False, status="failed",
                              flags=(type(exc).__name__,))
    if cfg.warm_start and prev_f0_hz is not None and band[0] < prev_f0_hz / fs < band[1]:
        f0 = prev_f0_hz / fs
    P = cfg.P if cfg.P is not None else fill_spectrum_harmonics(f0)
    try:
        while True:
            # keep the top harmonic half an f0 below Nyquist, where its sine
            # column would otherwise vanish and the amplitudes blow up
            f0_cap = min(band[1], 0.5 / (P + 0.5))
            mc = ModelConfig(P, cfg.L_phi, cfg.L, f0_min=band[0], f0_max=f0_cap,
                             rho=cfg.rho, max_iters=cfg.max_iters)
            fitted = fit(frame, mc, FitOptions(init_f0=min(f0, f0_cap)))
            pinned = f0_track(fitted.phase, frame.N).max() >= f0_cap * (1 - 1e-6)
            if cfg.P is not None or P == 1 or f0_cap == band[1] or not pinned:
                break
            P -= 1  # f0 rises through the window: trade the top harmonic for headroom
    except (ValueError, np.linalg.LinAlgError, RuntimeError) as exc:
        log.info("window at %.3f s failed: %s", frame.t_center, exc)
        return AnalysisRecord(frame.t_center, voiced=False, status="failed",
                              f0_init_hz=f0 * fs, n_harmonics=P, flags=(type(exc).__name__,))
    rec = AnalysisRecord(frame.t_center, voiced=True, status="ok",
                         f0_init_hz=f0 * fs, n_harmonics=P)
    n_ph = cfg.n_per_harmonic if "band-hnr" in cfg.measures else 0
    ms = compute_measures(fitted, n_per_harmonic=n_ph, rates="rates" in cfg.measures)
    rec.iters = fitted.iters
    rec.converged = fitted.converged
    rec.measures = ms
    rec.flags = tuple(fitted.flags) + tuple(ms.flags)
    if "tilt" in cfg.measures:
        try:
            ar = burg_ar(fitted.v_hat, cfg.ar_order)
            src = adjust_harmonic_powers(fitted, ms, ar)
            rec.tilt_db_per_octave = src.tilt_db_per_octave
            rec.raw_tilt_db_per_octave = src.raw_tilt_db_per_octave
        except (ValueError, DegenerateSignalError) as exc:
            rec.flags += (f"tilt:{type(exc).__name__}",)
    return rec


def analyze_signal(x, fs: float, cfg: PipelineConfig) -> list[AnalysisRecord]:
    """Analyze an in-memory signal already at ``fs``; one record per hop."""
    x = np.asarray(x, dtype=float)
    N = int(round(cfg.window_s * fs))
    hop = int(round(cfg.hop_s * fs))
    records = []
    prev = None
    for i in range(record_count(x.size, N, hop)):
        start = i * hop
        frame = WindowedFrame(x[start: start + N], fs, (start + (N - 1) / 2) / fs)
        rec = _analyze_frame(frame, cfg, prev)
        ok = rec.status == "ok" and rec.converged
        prev = rec.measures.mean_f0_hz if ok else None
        records.append(rec)
    return records


def analyze_file(path, cfg: PipelineConfig) -> list[AnalysisRecord]:
    """Read, resample to ``cfg.target_fs`` and analyze a WAV file."""
    x, fs = read_wav(path)
    if cfg.target_fs > fs:
        raise ValueError(f"target rate {cfg.target_fs} exceeds file rate {fs}")
    x = resample_to(x, fs, cfg.target_fs)
    return analyze_signal(x, cfg.target_fs, cfg)


# ---------------------------------------------------------------------------
# outputs

_BASE_COLUMNS = (
    "t_center_s", "status", "voiced", "f0_init_hz", "n_harmonics", "iters", "converged",
    "mean_f0_hz", "hnr_db", "f0dot_extreme_hz_s", "f0dot_rms_hz_s",
    "psdot_extreme_per_s", "psdot_rms_per_s",
)
_TAIL_COLUMNS = ("tilt_db_per_octave", "raw_tilt_db_per_octave", "flags")
CSV_COLUMNS = _BASE_COLUMNS + _TAIL_COLUMNS
SERIES_COLUMNS = ("t_center_s", "mean_f0_hz", "hnr_db", "f0dot_extreme_hz_s",
                  "psdot_extreme_per_s")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return ""
    return repr(v)


def _row(rec: AnalysisRecord, n_ph: int) -> dict:
    ms = rec.measures
    row = {
        "t_center_s": rec.t_center_s,
        "status": rec.status,
        "voiced": rec.voiced,
        "f0_init_hz": rec.f0_init_hz,
        "n_harmonics": rec.n_harmonics,
        "iters": rec.iters,
        "converged": rec.converged,
    }
    for name, attr in (("mean_f0_hz", "mean_f0_hz"), ("hnr_db", "hnr_db"),
                       ("f0dot_extreme_hz_s", "f0dot_extreme_hz_s"),
                       ("f0dot_rms_hz_s", "f0dot_rms_hz_s"),
                       ("psdot_extreme_per_s", "psdot_extreme_per_s"),
                       ("psdot_rms_per_s", "psdot_rms_per_s")):
        row[name] = None if ms is None else getattr(ms, attr)
    for p in range(1, n_ph + 1):
        vals = () if ms is None else ms.per_harmonic_hnr_db
        row[f"hnr_h{p}_db"] = vals[p - 1] if p <= len(vals) else None
    row["tilt_db_per_octave"] = rec.tilt_db_per_octave
    row["raw_tilt_db_per_octave"] = rec.raw_tilt_db_per_octave
    row["flags"] = ";".join(rec.flags)
    return row


def _json_value(v):
    if isinstance(v, float) and not math.isfinite(v):
        return "NaN" if math.isnan(v) else ("Infinity" if v > 0 else "-Infinity")
    if isinstance(v, (list, tuple)):
        return [_json_value(u) for u in v]
    if isinstance(v, dict):
        return {k: _json_value(u) for k, u in v.items()}
    return v


def _from_json_value(v):
    if v in ("Infinity", "-Infinity", "NaN"):
        return float(v.replace("inity", ""))
    return v


def _to_tuple(v):
    if isinstance(v, list):
        return tuple(_to_tuple(u) for u in v)
    return _from_json_value(v)


def write_outputs(records: Sequence[AnalysisRecord], out_prefix,
                  formats: Sequence[str] = ("csv", "json"), series: bool = True,
                  meta: Optional[dict] = None) -> list[Path]:
    """Write ``<prefix>.csv``, ``<prefix>.json`` and ``<prefix>.series.csv``.

    Absent values are empty CSV fields (never zeros) and ``null`` in JSON.
    """
    if not records:
        raise ValueError("no records to write")
    prefix = Path(out_prefix)
    written = []
    n_ph = max((len(r.measures.per_harmonic_hnr_db) for r in records if r.measures), default=0)
    cols = _BASE_COLUMNS + tuple(f"hnr_h{p}_db" for p in range(1, n_ph + 1)) + _TAIL_COLUMNS
    if "csv" in formats:
        path = prefix.with_name(prefix.name + ".csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, quoting=csv.QUOTE_MINIMAL, lineterminator="\r\n")
            w.writerow(cols)
            for rec in records:
                row = _row(rec, n_ph)
                w.writerow([row[c] if c in ("status", "flags") else _fmt(row[c]) for c in cols])
        written.append(path)
    if "json" in formats:
        path = prefix.with_name(prefix.name + ".json")
        doc = {
            "schema_version": SCHEMA_VERSION,
            "meta": _json_value(meta or {}),
            "records": [_json_value(asdict(r)) for r in records],
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=1, allow_nan=False)
        written.append(path)
    if series:
        path = prefix.with_name(prefix.name + ".series.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\r\n")
            w.writerow(SERIES_COLUMNS)
            for rec in records:
                row = _row(rec, 0)
                w.writerow([_fmt(row[c]) for c in SERIES_COLUMNS])
        written.append(path)
    return written


def load_records_json(path) -> list[AnalysisRecord]:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema version {doc.get('schema_version')}")
    out = []
    mnames = {f.name for f in fields(MeasureSet)}
    for d in doc["records"]:
        d = {k: _to_tuple(v) for k, v in d.items()}
        ms = d.pop("measures")
        if ms is not None:
            ms = MeasureSet(**{k: _to_tuple(v) for k, v in ms.items() if k in mnames})
        out.append(AnalysisRecord(measures=ms, **d))
    return out
