"""Accelerometer data: CSV ingestion, windowing, synthetic generation, and
the population/personalized split protocols.

A sample window is 15 s of tri-axial signal at 20 Hz (3x300 values, units g)
with one of eight activity labels. Windows never overlap, so the personalized
protocol cannot leak training samples into its test span.
"""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import ArgumentError, IngestError
from .tensor import Rng

SAMPLE_RATE_HZ = 20.0
WINDOW_SECONDS = 15
WINDOW_SAMPLES = 300
ATOMIC_SAMPLES = 60
ATOMIC_COUNT = 5

# Fixed label order; CSV files use these exact strings.
ACTIVITY_NAMES = [
    "walking",
    "nordic_walking",
    "running",
    "soccer",
    "rowing",
    "bicycling",
    "exercise_bicycling",
    "lying_down",
]
ACTIVITY_INDEX = {name: i for i, name in enumerate(ACTIVITY_NAMES)}

CSV_HEADER = ["subject", "activity", "t", "ax", "ay", "az"]


@dataclass
class SampleWindow:
    """One labeled 15-second window: readings[axis, sample] in g."""

    readings: np.ndarray  # shape (3, 300)
    label: int
    subject_id: int

    def __post_init__(self):
        if self.readings.shape != (3, WINDOW_SAMPLES):
            raise ArgumentError(
                f"window readings must be (3, {WINDOW_SAMPLES}), got {self.readings.shape}")
        if not 0 <= self.label < len(ACTIVITY_NAMES):
            raise ArgumentError(f"label {self.label} out of range")


@dataclass
class SubjectDataset:
    """All windows of one subject, per activity, chronology preserved."""

    subject_id: int
    windows_by_class: dict[int, list[SampleWindow]] = field(default_factory=dict)

    def all_windows(self) -> list[SampleWindow]:
        out = []
        for label in sorted(self.windows_by_class):
            out.extend(self.windows_by_class[label])
        return out


def split_atomic(window: SampleWindow) -> list[np.ndarray]:
    """Five consecutive non-overlapping 3x60 pieces in temporal order;
    concatenating them reproduces the window exactly."""
    return [np.ascontiguousarray(window.readings[:, i * ATOMIC_SAMPLES:(i + 1) * ATOMIC_SAMPLES])
            for i in range(ATOMIC_COUNT)]


# ---------------------------------------------------------------------------
# CSV ingestion


def ingest_csv(path) -> list[SubjectDataset]:
    """Read `subject,activity,t,ax,ay,az` rows into windowed subject datasets.

    The file must already be sampled at 20 Hz (+-1%); rows are validated, not
    resampled. Streams are grouped per (subject, activity) in file order and
    cut into non-overlapping 300-sample windows; a trailing partial window is
    dropped. Errors carry the 1-based file line number.
    """
    streams: dict[tuple[int, int], dict] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError(f"{path}: empty file, expected header "
                              f"{','.join(CSV_HEADER)}") from None
        if [h.strip() for h in header] != CSV_HEADER:
            raise IngestError(f"{path}: line 1: expected header "
                              f"{','.join(CSV_HEADER)}, got {','.join(header)}")
        for line_no, row in enumerate(reader, start=2):
            if len(row) != 6:
                raise IngestError(f"{path}: line {line_no}: expected 6 columns, got {len(row)}")
            activity = row[1].strip()
            if activity not in ACTIVITY_INDEX:
                raise IngestError(f"{path}: line {line_no}: unknown activity {activity!r}; "
                                  f"expected one of {ACTIVITY_NAMES}")
            try:
                subject = int(row[0])
                t = float(row[2])
                values = [float(row[3]), float(row[4]), float(row[5])]
            except ValueError as exc:
                raise IngestError(f"{path}: line {line_no}: {exc}") from exc
            key = (subject, ACTIVITY_INDEX[activity])
            stream = streams.setdefault(key, {"t_prev": None, "rows": []})
            if stream["t_prev"] is not None:
                dt = t - stream["t_prev"]
                if dt <= 0:
                    raise IngestError(f"{path}: line {line_no}: non-monotone timestamp "
                                      f"{t} after {stream['t_prev']}")
                nominal = 1.0 / SAMPLE_RATE_HZ
                if abs(dt - nominal) > 0.01 * nominal:
                    raise IngestError(f"{path}: line {line_no}: sample interval {dt:.6g}s "
                                      f"deviates more than 1% from {nominal}s (20 Hz)")
            stream["t_prev"] = t
            stream["rows"].append(values)

    subjects: dict[int, SubjectDataset] = {}
    for (subject, label), stream in streams.items():
        rows = np.array(stream["rows"], dtype=np.float64)  # [T, 3]
        n_windows = rows.shape[0] // WINDOW_SAMPLES
        ds = subjects.setdefault(subject, SubjectDataset(subject))
        windows = ds.windows_by_class.setdefault(label, [])
        for w in range(n_windows):
            chunk = rows[w * WINDOW_SAMPLES:(w + 1) * WINDOW_SAMPLES]
            windows.append(SampleWindow(np.ascontiguousarray(chunk.T), label, subject))
    return [subjects[sid] for sid in sorted(subjects)]


def write_dataset_csv(datasets: list[SubjectDataset], path) -> None:
    """Write windows back out in the ingestion schema, 20 Hz timestamps."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(CSV_HEADER) + "\n")
        for ds in datasets:
            for label in sorted(ds.windows_by_class):
                name = ACTIVITY_NAMES[label]
                i = 0
                for window in ds.windows_by_class[label]:
                    for k in range(WINDOW_SAMPLES):
                        t = i / SAMPLE_RATE_HZ
                        ax, ay, az = window.readings[:, k]
                        fh.write(f"{ds.subject_id},{name},{t!r},{ax!r},{ay!r},{az!r}\n")
                        i += 1


# ---------------------------------------------------------------------------
# Synthetic generation


@dataclass
class Motif:
    """One atomic motion pattern: a per-axis sinusoid with optional linear
    amplitude drift across its 3-second render, plus noise.

    The single noise level drives three channels, all proportional to
    noise_sigma so that sigma=0 reproduces the analytic render exactly:
    additive Gaussian measurement noise; Gaussian execution-timing jitter (a
    per-segment phase offset of noise_sigma * phase_noise_scale radians
    shared by all axes); and Gaussian duration jitter (the segment's nominal
    3 s span stretches by noise_sigma * duration_noise_scale samples before
    the window is renormalized to 15 s). Real wearers never phase-lock their
    motion to window boundaries nor switch sub-activities on an exact grid;
    without the timing channels every window of one subject would repeat the
    same waveform sample-for-sample."""

    name: str
    frequency_hz: float
    amplitude: tuple[float, float, float]
    noise_sigma: float
    amplitude_drift: float = 0.0
    phase_noise_scale: float = 0.0
    duration_noise_scale: float = 0.0


@dataclass
class MotifSpec:
    """Synthetic dataset recipe: atomic motifs plus one ordered motif
    sequence of length five per activity class."""

    motifs: dict[str, Motif]
    classes: list[list[str]]  # indexed by activity label

    def __post_init__(self):
        for name, m in self.motifs.items():
            if not 0.0 < m.frequency_hz < SAMPLE_RATE_HZ / 2.0:
                raise ArgumentError(
                    f"motif {name!r}: frequency {m.frequency_hz} outside (0, "
                    f"{SAMPLE_RATE_HZ / 2}) Hz")
            if len(m.amplitude) != 3:
                raise ArgumentError(f"motif {name!r}: amplitude must have 3 axes")
            if m.noise_sigma < 0:
                raise ArgumentError(f"motif {name!r}: noise_sigma must be >= 0")
            if m.phase_noise_scale < 0:
                raise ArgumentError(f"motif {name!r}: phase_noise_scale must be >= 0")
            if m.duration_noise_scale < 0:
                raise ArgumentError(f"motif {name!r}: duration_noise_scale must be >= 0")
        if len(self.classes) != len(ACTIVITY_NAMES):
            raise ArgumentError(f"spec must define {len(ACTIVITY_NAMES)} classes, "
                                f"got {len(self.classes)}")
        for label, seq in enumerate(self.classes):
            if len(seq) != ATOMIC_COUNT:
                raise ArgumentError(f"class {ACTIVITY_NAMES[label]!r}: needs "
                                    f"{ATOMIC_COUNT} motifs, got {len(seq)}")
            for m in seq:
                if m not in self.motifs:
                    raise ArgumentError(f"class {ACTIVITY_NAMES[label]!r}: "
                                        f"unknown motif {m!r}")

    @classmethod
    def from_json_dict(cls, doc: dict, where: str = "") -> "MotifSpec":
        def fail(pointer, msg):
            raise ArgumentError(f"{where}{pointer}: {msg}")

        if not isinstance(doc, dict):
            fail("", "expected a JSON object")
        unknown = set(doc) - {"motifs", "classes"}
        if unknown:
            fail("", f"unknown keys {sorted(unknown)}")
        motifs = {}
        for i, entry in enumerate(doc.get("motifs", [])):
            allowed = {"name", "frequency_hz", "amplitude", "noise_sigma",
                       "amplitude_drift", "phase_noise_scale", "duration_noise_scale"}
            bad = set(entry) - allowed
            if bad:
                fail(f"/motifs/{i}", f"unknown keys {sorted(bad)}")
            for req in ("name", "frequency_hz", "amplitude", "noise_sigma"):
                if req not in entry:
                    fail(f"/motifs/{i}/{req}", "missing")
            if entry["name"] in motifs:
                fail(f"/motifs/{i}/name", f"duplicate motif {entry['name']!r}")
            motifs[entry["name"]] = Motif(
                name=entry["name"],
                frequency_hz=float(entry["frequency_hz"]),
                amplitude=tuple(float(a) for a in entry["amplitude"]),
                noise_sigma=float(entry["noise_sigma"]),
                amplitude_drift=float(entry.get("amplitude_drift", 0.0)),
                phase_noise_scale=float(entry.get("phase_noise_scale", 0.0)),
                duration_noise_scale=float(entry.get("duration_noise_scale", 0.0)),
            )
        seen = {}
        for i, entry in enumerate(doc.get("classes", [])):
            bad = set(entry) - {"activity", "motifs"}
            if bad:
                fail(f"/classes/{i}", f"unknown keys {sorted(bad)}")
            activity = entry.get("activity")
            if activity not in ACTIVITY_INDEX:
                fail(f"/classes/{i}/activity", f"unknown activity {activity!r}")
            if activity in seen:
                fail(f"/classes/{i}/activity", f"duplicate activity {activity!r}")
            seen[activity] = list(entry.get("motifs", []))
        missing = [a for a in ACTIVITY_NAMES if a not in seen]
        if missing:
            fail("/classes", f"missing activities {missing}")
        classes = [seen[a] for a in ACTIVITY_NAMES]
        try:
            return cls(motifs=motifs, classes=classes)
        except ArgumentError as exc:
            raise ArgumentError(f"{where}: {exc}") from exc

    @classmethod
    def load(cls, path) -> "MotifSpec":
        with open(path, encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ArgumentError(f"{path}: invalid JSON: {exc}") from exc
        return cls.from_json_dict(doc, where=str(path))


def default_motif_spec() -> MotifSpec:
    """The shipped recipe: six motifs, eight classes, and two order-swapped
    class pairs (identical motif multisets, different orderings)."""
    doc = json.loads(resources.files("cghar").joinpath("default_motifs.json").read_text())
    return MotifSpec.from_json_dict(doc, where="default_motifs.json")


def order_swapped_pairs(spec: MotifSpec) -> list[tuple[int, int]]:
    """Class pairs with equal motif multisets but different orderings."""
    pairs = []
    for i in range(len(spec.classes)):
        for j in range(i + 1, len(spec.classes)):
            if (Counter(spec.classes[i]) == Counter(spec.classes[j])
                    and spec.classes[i] != spec.classes[j]):
                pairs.append((i, j))
    return pairs


def render_motif(motif: Motif, phases: np.ndarray, amp_scale: float,
                 phase_offset: float = 0.0,
                 duration: int = ATOMIC_SAMPLES) -> np.ndarray:
    """Noise-free 3xduration render: per-axis sinusoid with segment-local
    time, linear amplitude drift over the nominal 3 s span, and the
    subject's phase/amplitude personality. `phase_offset` shifts all axes
    together (execution timing)."""
    tau = np.arange(duration) / SAMPLE_RATE_HZ
    drift = 1.0 + motif.amplitude_drift * tau / (ATOMIC_SAMPLES / SAMPLE_RATE_HZ)
    out = np.empty((3, duration))
    for axis in range(3):
        out[axis] = (motif.amplitude[axis] * amp_scale * drift
                     * np.sin(2.0 * math.pi * motif.frequency_hz * tau
                              + phases[axis] + phase_offset))
    return out


MIN_SEGMENT_SAMPLES = 12


def _segment_durations(raw: np.ndarray) -> np.ndarray:
    """Integer segment lengths: clip, renormalize to the window length, and
    distribute rounding remainders to the largest fractional parts."""
    raw = np.clip(raw, MIN_SEGMENT_SAMPLES, None)
    scaled = raw * (WINDOW_SAMPLES / raw.sum())
    durations = np.floor(scaled).astype(np.int64)
    frac = scaled - durations
    for i in np.argsort(-frac)[: WINDOW_SAMPLES - int(durations.sum())]:
        durations[i] += 1
    return durations


def synth_generate(spec: MotifSpec, n_subjects: int, windows_per_class: int,
                   rng: Rng) -> list[SubjectDataset]:
    """Generate per-subject windows for every class.

    Each window concatenates the class's five motifs in spec order; a
    subject carries a fixed random amplitude scale and per-(motif, axis)
    phases. Every stochastic channel scales with the motif's noise_sigma, so
    with sigma=0 all windows of one (subject, class) are identical and equal
    to the analytic render with exact 3 s segments. Draw order is frozen:
    per subject, amplitude then phases; per (class, window), five duration
    draws, then per segment one timing draw and one noise block.
    """
    if n_subjects < 1 or windows_per_class < 1:
        raise ArgumentError("synth_generate: need at least one subject and one window")
    motif_names = list(spec.motifs)
    datasets = []
    for s in range(1, n_subjects + 1):
        amp_scale = float(rng.uniform((), 0.85, 1.15))
        phases = {name: rng.uniform((3,), 0.0, 2.0 * math.pi) for name in motif_names}
        ds = SubjectDataset(s)
        for label, seq in enumerate(spec.classes):
            windows = []
            for _ in range(windows_per_class):
                stretch = rng.normal((ATOMIC_COUNT,))
                raw = np.array([
                    ATOMIC_SAMPLES + spec.motifs[name].noise_sigma
                    * spec.motifs[name].duration_noise_scale * stretch[seg]
                    for seg, name in enumerate(seq)])
                durations = _segment_durations(raw)
                readings = np.empty((3, WINDOW_SAMPLES))
                lo = 0
                for seg, name in enumerate(seq):
                    motif = spec.motifs[name]
                    jitter = float(rng.normal(()))
                    n = int(durations[seg])
                    noise = rng.normal((3, n))
                    base = render_motif(
                        motif, phases[name], amp_scale,
                        phase_offset=motif.noise_sigma * motif.phase_noise_scale * jitter,
                        duration=n)
                    readings[:, lo:lo + n] = base + motif.noise_sigma * noise
                    lo += n
                windows.append(SampleWindow(readings, label, s))
            ds.windows_by_class[label] = windows
        datasets.append(ds)
    return datasets


# ---------------------------------------------------------------------------
# Split protocols


def population_split(datasets: list[SubjectDataset], held_out_subject: int):
    """Train on every other subject's windows, test on the held-out subject."""
    ids = [d.subject_id for d in datasets]
    if len(ids) < 2:
        raise ArgumentError("population_split: need at least 2 subjects")
    if held_out_subject not in ids:
        raise ArgumentError(f"population_split: unknown subject {held_out_subject}; "
                            f"have {ids}")
    train, test = [], []
    for d in datasets:
        target = test if d.subject_id == held_out_subject else train
        target.extend(d.all_windows())
    return train, test


def personalized_split(dataset: SubjectDataset, train_minutes: int = 2,
                       total_minutes: int = 5):
    """First `train_minutes` of every activity stream for training, the rest
    of the first `total_minutes` for testing."""
    n_train = train_minutes * 60 // WINDOW_SECONDS
    n_total = total_minutes * 60 // WINDOW_SECONDS
    train, test = [], []
    for label in sorted(dataset.windows_by_class):
        windows = dataset.windows_by_class[label]
        if len(windows) < n_total:
            raise ArgumentError(
                f"personalized_split: activity {ACTIVITY_NAMES[label]!r} has only "
                f"{len(windows)} windows, need {n_total} ({total_minutes} minutes)")
        train.extend(windows[:n_train])
        test.extend(windows[n_train:n_total])
    return train, test
