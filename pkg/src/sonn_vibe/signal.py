"""Vibration signal ingestion, framing, and normalization.

Recordings are row-per-sample ASCII tables (whitespace-separated for the
accelerometer rig format, comma-separated for generic CSV). Classifier
inputs are non-overlapping 2-channel frames, standard-normalized per
channel and rescaled so the largest magnitude is exactly 1.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, ParseError

DEFAULT_SAMPLE_RATE = 20480.0
DEFAULT_FRAME_LEN = 1000

CLASS_NAMES = ("Healthy", "EarlyFault", "ModerateFault", "SevereFault")
CLASS_ABBREV = ("H", "ELF", "MLF", "SLF")
N_CLASSES = 4


@dataclass
class RawRecording:
    """A multi-channel vibration recording sampled at a common rate.

    channels is a (n_channels, n_samples) float64 array; channel_names
    labels each row (accelerometer axis or source column).
    """

    sample_rate: float
    channels: np.ndarray
    source_id: str = ""
    channel_names: tuple[str, ...] = ()

    def __post_init__(self):
        self.channels = np.asarray(self.channels, dtype=np.float64)
        if self.channels.ndim != 2:
            raise ValueError("channels must be a 2D (n_channels, n_samples) array")
        if self.channels.shape[1] < 1:
            raise ValueError("recording must contain at least one sample")
        if not self.sample_rate > 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not self.channel_names:
            self.channel_names = tuple(f"ch{i}" for i in range(self.channels.shape[0]))
        if len(self.channel_names) != self.channels.shape[0]:
            raise ValueError("one channel name per channel required")

    @property
    def n_samples(self) -> int:
        return self.channels.shape[1]

    @property
    def n_channels(self) -> int:
        return self.channels.shape[0]

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate


@dataclass
class Frame:
    """A 2 x L sample window, optionally labeled with a severity class.

    Normalized frames satisfy max|samples| == 1 per channel (or the channel
    is all zeros when the raw window was constant).
    """

    samples: np.ndarray
    label: int | None = None
    normalized: bool = False

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2:
            raise ValueError("frame samples must be 2D (channels, length)")
        if self.label is not None and not 0 <= self.label < N_CLASSES:
            raise ValueError(f"label must be in [0, {N_CLASSES}), got {self.label}")

    @property
    def length(self) -> int:
        return self.samples.shape[1]


@dataclass
class Dataset:
    """Labeled, normalized frames plus per-frame provenance.

    provenance[i] is (source_id, frame_index) for frames[i].
    """

    frames: list[Frame]
    class_names: tuple[str, ...] = CLASS_NAMES
    provenance: list[tuple[str, int]] = field(default_factory=list)

    def __post_init__(self):
        if len(self.class_names) != N_CLASSES:
            raise ValueError(f"expected {N_CLASSES} class names")
        if self.provenance and len(self.provenance) != len(self.frames):
            raise ValueError("provenance must align with frames")
        for i, f in enumerate(self.frames):
            if not f.normalized:
                raise ValueError(f"frame {i} is not normalized")
            if f.label is None:
                raise ValueError(f"frame {i} is unlabeled")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def labels(self) -> np.ndarray:
        return np.array([f.label for f in self.frames], dtype=np.int64)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Stack the dataset into (X, y) with X of shape (n, 2, L)."""
        x = np.stack([f.samples for f in self.frames])
        return x, self.labels


def _parse_table(text: str, sep: str | None, skip_header: bool = False) -> np.ndarray:
    """Parse a row-per-sample numeric table; raises ParseError/FormatError."""
    rows: list[list[float]] = []
    width = None
    skipped = not skip_header
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if not skipped:
            skipped = True
            continue
        tokens = line.split(sep) if sep else line.split()
        values = []
        for tok in tokens:
            tok = tok.strip()
            try:
                values.append(float(tok))
            except ValueError:
                raise ParseError(f"row {lineno}: non-numeric token {tok!r}") from None
        if width is None:
            width = len(values)
        elif len(values) != width:
            raise FormatError(
                f"row {lineno}: expected {width} columns, found {len(values)}"
            )
        rows.append(values)
    if not rows:
        raise FormatError("no data rows found")
    return np.asarray(rows, dtype=np.float64)


def _select_channels(table: np.ndarray, channel_indices: tuple[int, int],
                     sample_rate: float, source_id: str) -> RawRecording:
    n_cols = table.shape[1]
    for idx in channel_indices:
        if not 0 <= idx < n_cols:
            raise ValueError(f"channel index {idx} out of range for {n_cols} columns")
    chans = table[:, list(channel_indices)].T.copy()
    names = tuple(f"col{i}" for i in channel_indices)
    return RawRecording(sample_rate=sample_rate, channels=chans,
                        source_id=source_id, channel_names=names)


def _as_text(file_bytes: bytes | str) -> str:
    if isinstance(file_bytes, bytes):
        return file_bytes.decode("ascii")
    return file_bytes


def ingest_ims(file_bytes: bytes | str, channel_indices: tuple[int, int],
               sample_rate: float = DEFAULT_SAMPLE_RATE,
               source_id: str = "") -> RawRecording:
    """Read a whitespace-separated accelerometer-rig file (row per sample).

    channel_indices picks the two columns forming the x/y accelerometer
    pair (the 8-column rig files hold bearings 1-4, two columns each).
    """
    table = _parse_table(_as_text(file_bytes), sep=None)
    return _select_channels(table, channel_indices, sample_rate, source_id)


def ingest_csv(file_bytes: bytes | str, channel_indices: tuple[int, int] = (0, 1),
               skip_header: bool = False,
               sample_rate: float = DEFAULT_SAMPLE_RATE,
               source_id: str = "") -> RawRecording:
    """Read a comma-separated file with the same row-per-sample convention."""
    table = _parse_table(_as_text(file_bytes), sep=",", skip_header=skip_header)
    return _select_channels(table, channel_indices, sample_rate, source_id)


def ingest_path(path: str | os.PathLike, channel_indices: tuple[int, int] = (0, 1),
                skip_header: bool = False,
                sample_rate: float = DEFAULT_SAMPLE_RATE) -> RawRecording:
    """Ingest a file, choosing CSV vs whitespace format by .csv extension."""
    path = os.fspath(path)
    with open(path, "rb") as fh:
        data = fh.read()
    if path.lower().endswith(".csv"):
        return ingest_csv(data, channel_indices, skip_header=skip_header,
                          sample_rate=sample_rate, source_id=os.path.basename(path))
    return ingest_ims(data, channel_indices, sample_rate=sample_rate,
                      source_id=os.path.basename(path))


def write_csv(rec: RawRecording, path: str | os.PathLike) -> None:
    """Write a recording as CSV, one row per sample instant.

    Values use shortest round-trip float formatting, so ingest_csv recovers
    the exact float64 samples.
    """
    with open(path, "w") as fh:
        for row in rec.channels.T:
            fh.write(",".join(repr(float(v)) for v in row))
            fh.write("\n")


def make_frames(rec: RawRecording, frame_len: int = DEFAULT_FRAME_LEN) -> list[Frame]:
    """Cut a 2-channel recording into non-overlapping unnormalized frames.

    Frame j covers samples [j*frame_len, (j+1)*frame_len); the trailing
    remainder is discarded. Fewer than frame_len samples yields [].
    """
    if frame_len < 1:
        raise ValueError(f"frame_len must be >= 1, got {frame_len}")
    if rec.n_channels != 2:
        raise ValueError(f"expected a 2-channel recording, got {rec.n_channels}")
    n_frames = rec.n_samples // frame_len
    return [
        Frame(rec.channels[:, j * frame_len:(j + 1) * frame_len].copy())
        for j in range(n_frames)
    ]


def normalize_frame(f: Frame) -> Frame:
    """Standard-normalize each channel, then rescale into [-1, 1].

    Per channel: subtract the mean, divide by the population standard
    deviation, then divide by the max absolute value so at least one sample
    sits at +/-1. A zero-variance channel maps to all zeros.
    """
    if f.normalized:
        raise ValueError("frame is already normalized")
    out = np.empty_like(f.samples)
    for c in range(f.samples.shape[0]):
        x = f.samples[c]
        std = x.std()
        if std == 0.0:
            out[c] = 0.0
            continue
        z = (x - x.mean()) / std
        out[c] = z / np.max(np.abs(z))
    return Frame(out, label=f.label, normalized=True)


def make_dataset(recordings: list[tuple[RawRecording, int]],
                 frame_len: int = DEFAULT_FRAME_LEN,
                 class_names: tuple[str, ...] = CLASS_NAMES) -> Dataset:
    """Frame, normalize, and label a list of (recording, class_id) pairs."""
    frames: list[Frame] = []
    provenance: list[tuple[str, int]] = []
    for rec, label in recordings:
        for j, raw in enumerate(make_frames(rec, frame_len)):
            raw.label = label
            frames.append(normalize_frame(raw))
            provenance.append((rec.source_id, j))
    return Dataset(frames=frames, class_names=class_names, provenance=provenance)
