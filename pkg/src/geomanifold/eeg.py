"""Multichannel recording containers, the preprocessing pipeline, and EEGB file I/O.

Pipeline order is resample -> bandpass -> average re-reference -> segment.
All transforms are pure per-recording functions; data is fp32 at rest and
fp64 inside the filters.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np
from scipy import signal as sps

from .errors import DataError, FormatError, UsageError

EEGB_MAGIC = b"EEGB"
EEGB_VERSION = 1


@dataclass
class EEGRecording:
    """Channel-major fp32 signal block with its sample rate and provenance."""

    data: np.ndarray  # (n_channels, n_samples) float32
    rate_hz: float
    subject_id: int = 0
    label: int | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 2 or self.data.shape[0] < 1 or self.data.shape[1] < 1:
            raise UsageError(f"recording data must be (channels, samples), got {self.data.shape}")
        if not self.rate_hz > 0:
            raise UsageError(f"sample rate must be positive, got {self.rate_hz}")
        if not np.all(np.isfinite(self.data)):
            raise DataError("recording contains non-finite samples")
        if self.subject_id < 0:
            raise UsageError("subject_id must be non-negative")

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.rate_hz


@dataclass
class FilterSpec:
    low_hz: float = 0.5
    high_hz: float = 45.0
    # cascade order of the bandpass (forward-backward application doubles the
    # effective order); must be even because a bandpass has pole pairs
    order: int = 12

    def __post_init__(self):
        if self.order <= 0 or self.order % 2 != 0:
            raise UsageError(f"filter order must be an even positive integer, got {self.order}")
        if not (0 < self.low_hz < self.high_hz):
            raise UsageError(f"band edges must satisfy 0 < low < high, got {self.low_hz}, {self.high_hz}")


@dataclass
class SegmentSet:
    """Homogeneous segments plus a fold id per segment (-1 = unassigned)."""

    segments: list[EEGRecording]
    folds: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not self.folds:
            self.folds = [-1] * len(self.segments)
        if len(self.folds) != len(self.segments):
            raise UsageError("fold list length must match segment count")
        if self.segments:
            first = self.segments[0]
            for seg in self.segments[1:]:
                if (
                    seg.n_channels != first.n_channels
                    or seg.n_samples != first.n_samples
                    or seg.rate_hz != first.rate_hz
                ):
                    raise UsageError("segments must share channel count, length and rate")

    def __len__(self):
        return len(self.segments)

    def subject_ids(self) -> list[int]:
        return sorted({s.subject_id for s in self.segments})

    def check_subject_independent(self):
        """No subject may contribute segments to more than one fold."""
        seen: dict[int, int] = {}
        for seg, fold in zip(self.segments, self.folds):
            if fold < 0:
                continue
            if seg.subject_id in seen and seen[seg.subject_id] != fold:
                raise DataError(
                    f"subject {seg.subject_id} appears in folds {seen[seg.subject_id]} and {fold}"
                )
            seen[seg.subject_id] = fold


# ---------------------------------------------------------------------------
# transforms


def resample(rec: EEGRecording, target_hz: float) -> EEGRecording:
    """Polyphase resampling per channel; identical rates pass data through bit-exactly."""
    if not target_hz > 0:
        raise UsageError(f"target rate must be positive, got {target_hz}")
    if float(target_hz) == float(rec.rate_hz):
        return replace(rec, data=rec.data.copy(), rate_hz=float(target_hz))
    ratio = Fraction(float(target_hz)).limit_denominator(10**6) / Fraction(
        float(rec.rate_hz)
    ).limit_denominator(10**6)
    n_out = int(rec.n_samples * ratio.numerator // ratio.denominator)
    out = sps.resample_poly(
        rec.data.astype(np.float64), ratio.numerator, ratio.denominator, axis=1
    )
    return replace(rec, data=out[:, :n_out].astype(np.float32), rate_hz=float(target_hz))


def bandpass(rec: EEGRecording, spec: FilterSpec) -> EEGRecording:
    """Zero-phase Butterworth bandpass (biquad cascade run forward and backward).

    Transients are suppressed by reflect-padding three filter orders of samples.
    """
    nyquist = rec.rate_hz / 2.0
    if spec.high_hz >= nyquist:
        raise UsageError(f"band edge {spec.high_hz} Hz >= Nyquist {nyquist} Hz")
    sos = sps.butter(
        spec.order // 2, [spec.low_hz, spec.high_hz], btype="band", fs=rec.rate_hz, output="sos"
    )
    padlen = min(3 * spec.order, rec.n_samples - 1)
    out = sps.sosfiltfilt(
        sos, rec.data.astype(np.float64), axis=1, padtype="even", padlen=padlen
    )
    return replace(rec, data=out.astype(np.float32))


def average_rereference(rec: EEGRecording) -> EEGRecording:
    """Subtract the per-sample cross-channel mean from every channel."""
    if rec.n_channels < 2:
        raise UsageError("average re-referencing needs at least 2 channels")
    data = rec.data.astype(np.float64)
    out = data - data.mean(axis=0, keepdims=True)
    return replace(rec, data=out.astype(np.float32))


def segment(rec: EEGRecording, window_s: float) -> SegmentSet:
    """Non-overlapping contiguous windows; the trailing remainder is dropped."""
    win = int(np.floor(window_s * rec.rate_hz))
    if win < 1 or rec.n_samples < win:
        raise UsageError(
            f"window of {window_s}s ({win} samples) does not fit a {rec.n_samples}-sample recording"
        )
    count = rec.n_samples // win
    segments = [
        EEGRecording(
            data=rec.data[:, i * win : (i + 1) * win].copy(),
            rate_hz=rec.rate_hz,
            subject_id=rec.subject_id,
            label=rec.label,
        )
        for i in range(count)
    ]
    return SegmentSet(segments)


def preprocess(
    recordings: list[EEGRecording],
    target_hz: float = 200.0,
    spec: FilterSpec | None = None,
    window_s: float = 4.0,
) -> SegmentSet:
    """resample -> bandpass -> re-reference -> segment, recording by recording."""
    spec = spec or FilterSpec()
    segments: list[EEGRecording] = []
    for rec in recordings:
        rec = resample(rec, target_hz)
        rec = bandpass(rec, spec)
        rec = average_rereference(rec)
        segments.extend(segment(rec, window_s).segments)
    return SegmentSet(segments)


# ---------------------------------------------------------------------------
# EEGB container (little-endian):
#   magic "EEGB", version u32, record count u32; per record:
#   subject_id u32, label i32 (-1 = none), n_channels u32, n_samples u32,
#   rate_hz f32, then n_channels*n_samples f32 samples channel-major.


def write_eegb(path, recordings: list[EEGRecording]):
    with open(path, "wb") as fh:
        fh.write(EEGB_MAGIC)
        fh.write(struct.pack("<II", EEGB_VERSION, len(recordings)))
        for rec in recordings:
            label = -1 if rec.label is None else int(rec.label)
            fh.write(
                struct.pack(
                    "<IiIIf", rec.subject_id, label, rec.n_channels, rec.n_samples, rec.rate_hz
                )
            )
            fh.write(np.ascontiguousarray(rec.data, dtype="<f4").tobytes())


def read_eegb(path) -> list[EEGRecording]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != EEGB_MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}, expected {EEGB_MAGIC!r}", offset=0)
    if len(blob) < 12:
        raise FormatError("truncated header", offset=len(blob))
    version, count = struct.unpack_from("<II", blob, 4)
    if version != EEGB_VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    offset = 12
    recordings = []
    for i in range(count):
        if offset + 20 > len(blob):
            raise FormatError(f"truncated record header for record {i}", offset=offset)
        subject, label, n_ch, n_s, rate = struct.unpack_from("<IiIIf", blob, offset)
        offset += 20
        n_bytes = 4 * n_ch * n_s
        if offset + n_bytes > len(blob):
            raise FormatError(f"truncated sample block for record {i}", offset=offset)
        data = np.frombuffer(blob, dtype="<f4", count=n_ch * n_s, offset=offset).reshape(
            n_ch, n_s
        )
        offset += n_bytes
        recordings.append(
            EEGRecording(
                data=data.copy(),
                rate_hz=float(rate),
                subject_id=subject,
                label=None if label < 0 else label,
            )
        )
    if offset != len(blob):
        raise FormatError("trailing bytes after last record", offset=offset)
    return recordings


def write_segments(path, segs: SegmentSet):
    write_eegb(path, segs.segments)


def read_segments(path) -> SegmentSet:
    return SegmentSet(read_eegb(path))
