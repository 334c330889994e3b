"""Trials, datasets, CSV/manifest ingestion and a synthetic generator.

A trial CSV holds rows ``t,x,y,z[,label]`` (seconds, then acceleration in G).
A manifest is JSON::

    {"classes": ["stay", "walk", ...],
     "sample_rate": 100,                       # optional, Hz
     "trials": [{"path": "a.csv", "role": "train", "label": "walk"},
                {"path": "s.csv", "role": "sequence"}]}

Paths are relative to the manifest. Segmented trials take their class from
the manifest ``label``; sequence trials carry a class name on every row.

Timestamps are kept for output but never enter the math: the network steps
once per row, so irregularly sampled recordings must be resampled upstream.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numeric import Rng

ROLES = ("train", "test", "sequence")
DEFAULT_SAMPLE_RATE = 100.0
MANIFEST_KEYS = {"classes", "trials", "sample_rate"}
TRIAL_KEYS = {"path", "role", "label", "id"}


class DatasetError(ValueError):
    """Malformed trial file or manifest."""


@dataclass
class Trial:
    trial_id: str
    t: np.ndarray
    values: np.ndarray                 # (N, 3) acceleration in G
    labels: int | np.ndarray           # single class index, or (N,) per-sample indices
    role: str = "train"
    sample_rate: float = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        n = len(self.values)
        if n == 0:
            raise DatasetError(f"trial {self.trial_id} has no samples")
        if self.values.shape != (n, 3) or self.t.shape != (n,):
            raise DatasetError(f"trial {self.trial_id} has inconsistent array shapes")
        if isinstance(self.labels, np.ndarray) and self.labels.shape != (n,):
            raise DatasetError(f"trial {self.trial_id}: {len(self.labels)} labels for {n} samples")

    def __len__(self) -> int:
        return len(self.values)

    @property
    def is_sequence(self) -> bool:
        return isinstance(self.labels, np.ndarray)

    def targets(self) -> np.ndarray:
        if self.is_sequence:
            return self.labels
        return np.full(len(self), self.labels, dtype=np.int64)


@dataclass
class Dataset:
    class_names: tuple[str, ...]
    trials: list[Trial] = field(default_factory=list)

    def __post_init__(self):
        h = len(self.class_names)
        for tr in self.trials:
            if int(np.max(tr.targets())) >= h or int(np.min(tr.targets())) < 0:
                raise DatasetError(f"trial {tr.trial_id} has a label outside the {h} classes")

    def __len__(self) -> int:
        return len(self.trials)

    def __iter__(self):
        return iter(self.trials)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def by_role(self, role: str) -> "Dataset":
        return Dataset(self.class_names, [t for t in self.trials if t.role == role])


def _class_index(label, class_names, where: str) -> int:
    if isinstance(label, (int, np.integer)) and not isinstance(label, bool):
        if 0 <= label < len(class_names):
            return int(label)
    elif isinstance(label, str) and label in class_names:
        return class_names.index(label)
    raise DatasetError(f"{where}: unknown class {label!r}")


def _looks_numeric(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def load_trial_csv(
    path,
    class_names,
    label=None,
    role: str = "train",
    trial_id: str | None = None,
    sample_rate: float = DEFAULT_SAMPLE_RATE,
) -> Trial:
    """Read one trial.

    With ``label`` given the trial is segmented (single class); otherwise
    every row must carry a fifth column naming its class.
    """
    path = Path(path)
    class_names = list(class_names)
    single = None if label is None else _class_index(label, class_names, str(path))
    ts, rows, row_labels = [], [], []
    with path.open(newline="", encoding="utf-8") as fh:
        for lineno, fields in enumerate(csv.reader(fh), start=1):
            if not fields or all(not f.strip() for f in fields):
                continue
            if lineno == 1 and not _looks_numeric(fields[0]):
                continue  # header
            if len(fields) not in (4, 5):
                raise DatasetError(f"{path}:{lineno}: expected 4 or 5 fields, got {len(fields)}")
            try:
                t, x, y, z = (float(f) for f in fields[:4])
            except ValueError:
                raise DatasetError(f"{path}:{lineno}: malformed number in {','.join(fields)!r}") from None
            if not all(math.isfinite(v) for v in (t, x, y, z)):
                raise DatasetError(f"{path}:{lineno}: non-finite value")
            if ts and t < ts[-1]:
                raise DatasetError(f"{path}:{lineno}: timestamp {t} decreases")
            if single is None:
                if len(fields) < 5:
                    raise DatasetError(f"{path}:{lineno}: label column missing for a per-sample labelled trial")
                row_labels.append(_class_index(fields[4].strip(), class_names, f"{path}:{lineno}"))
            ts.append(t)
            rows.append((x, y, z))
    if not rows:
        raise DatasetError(f"{path}: no samples")
    labels = single if single is not None else np.asarray(row_labels, dtype=np.int64)
    return Trial(
        trial_id=trial_id or path.stem,
        t=np.asarray(ts),
        values=np.asarray(rows, dtype=np.float64),
        labels=labels,
        role=role,
        sample_rate=sample_rate,
    )


def load_dataset(manifest_path, threads: int = 1) -> Dataset:
    manifest_path = Path(manifest_path)
    try:
        doc = json.loads(manifest_path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DatasetError(f"manifest not found: {manifest_path}") from None
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{manifest_path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise DatasetError(f"{manifest_path}: manifest must be a JSON object")
    unknown = set(doc) - MANIFEST_KEYS
    if unknown:
        raise DatasetError(f"{manifest_path}: unknown keys {sorted(unknown)}")
    classes = doc.get("classes")
    if not classes or not all(isinstance(c, str) for c in classes) or len(set(classes)) != len(classes):
        raise DatasetError(f"{manifest_path}: 'classes' must be a non-empty list of unique names")
    entries = doc.get("trials")
    if not entries:
        raise DatasetError(f"{manifest_path}: manifest lists no trials")
    rate = float(doc.get("sample_rate", DEFAULT_SAMPLE_RATE))

    base = manifest_path.parent
    for entry in entries:
        if not isinstance(entry, dict) or "path" not in entry:
            raise DatasetError(f"{manifest_path}: every trial needs a 'path'")
        extra = set(entry) - TRIAL_KEYS
        if extra:
            raise DatasetError(f"{manifest_path}: trial {entry['path']} has unknown keys {sorted(extra)}")
        role = entry.get("role", "train")
        if role not in ROLES:
            raise DatasetError(f"{manifest_path}: trial {entry['path']} has unknown role {role!r}")
        if role == "sequence" and entry.get("label") is not None:
            raise DatasetError(f"{manifest_path}: sequence trial {entry['path']} must use per-row labels")
        if not (base / entry["path"]).is_file():
            raise DatasetError(f"trial file not found: {base / entry['path']}")

    def load(entry):
        return load_trial_csv(
            base / entry["path"],
            classes,
            label=entry.get("label"),
            role=entry.get("role", "train"),
            trial_id=entry.get("id", Path(entry["path"]).stem),
            sample_rate=rate,
        )

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            trials = list(pool.map(load, entries))
    else:
        trials = [load(e) for e in entries]
    return Dataset(tuple(classes), trials)


def make_minibatches(trials, batch_size: int, rng: Rng) -> list[list[Trial]]:
    """Shuffle and cut into batches of ``batch_size``; the last batch may be short."""
    trials = list(trials)
    if not trials:
        raise DatasetError("cannot batch an empty dataset")
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    order = rng.permutation(len(trials))
    shuffled = [trials[i] for i in order]
    return [shuffled[i : i + batch_size] for i in range(0, len(shuffled), batch_size)]


def slice_window(trial: Trial, k: int, window: int) -> tuple[np.ndarray, np.ndarray]:
    """``window`` consecutive samples starting at ``k`` and their per-step targets."""
    if k < 0 or window < 1 or k + window > len(trial):
        raise DatasetError(
            f"window [{k}, {k + window}) is outside trial {trial.trial_id} of length {len(trial)}"
        )
    return trial.values[k : k + window], trial.targets()[k : k + window]


# --- synthetic data ---------------------------------------------------------


# Axes a third of a period apart: the acceleration vector runs round a circle
# in the plane normal to (1, 1, 1), so its length stays at sqrt(1.5)*a.
_DEFAULT_OFFSETS = (0.0, 2 * np.pi / 3, 4 * np.pi / 3)


@dataclass(frozen=True)
class SynthSpec:
    """Sinusoidal stand-in for accelerometer recordings.

    Class ``i`` oscillates at ``frequencies[i]`` Hz with amplitude
    ``amplitudes[i]`` G on all three axes, shifted per axis by
    ``phase_offsets[i]``. By default every class uses offsets a third of a
    period apart, so the vector length is constant within a trial and the
    amplitude can be read from any single sample; classes then differ in
    size (0.5 + 0.5i G) and rate (2 + 2i Hz). Each trial adds a random
    common phase and Gaussian noise.
    """

    num_classes: int = 6
    frequencies: tuple[float, ...] | None = None
    amplitudes: tuple[float, ...] | None = None
    phase_offsets: tuple[tuple[float, float, float], ...] | None = None
    noise_std: float = 0.05
    length: int = 2000
    trials_per_class: int = 25
    test_per_class: int = 6
    sequence_trials: int = 3
    segment_length: int | None = None
    sample_rate: float = DEFAULT_SAMPLE_RATE
    seed: int = 0

    def freqs(self) -> tuple[float, ...]:
        return self.frequencies or tuple(2.0 + 2.0 * i for i in range(self.num_classes))

    def amps(self) -> tuple[float, ...]:
        return self.amplitudes or tuple(0.5 + 0.5 * i for i in range(self.num_classes))

    def offsets(self) -> tuple[tuple[float, float, float], ...]:
        if self.phase_offsets is not None:
            return self.phase_offsets
        return (_DEFAULT_OFFSETS,) * self.num_classes

    def validate(self) -> None:
        f, a = self.freqs(), self.amps()
        if self.num_classes < 2:
            raise ValueError("need at least two classes")
        if len(f) != self.num_classes or len(a) != self.num_classes or len(self.offsets()) != self.num_classes:
            raise ValueError("frequencies, amplitudes and phase offsets must list one entry per class")
        if any(len(o) != 3 for o in self.offsets()):
            raise ValueError("phase offsets need one value per axis")
        if len(set(f)) != len(f):
            raise ValueError("class frequencies must be distinct")
        if any(x <= 0 or x >= self.sample_rate / 2 for x in f):
            raise ValueError(f"class frequencies must lie in (0, Nyquist = {self.sample_rate / 2} Hz)")
        if self.length < 1 or self.noise_std < 0 or self.sample_rate <= 0:
            raise ValueError("length, noise_std and sample_rate must be positive")
        if min(self.trials_per_class, self.test_per_class, self.sequence_trials) < 0:
            raise ValueError("trial counts must be non-negative")


def _synth_signal(rng: Rng, freq: float, amp: float, offsets, n: int, spec: SynthSpec, t0: float = 0.0):
    t = t0 + np.arange(n) / spec.sample_rate
    phase = 2 * np.pi * rng.random()
    offsets = np.asarray(offsets, dtype=np.float64)
    clean = amp * np.sin(2 * np.pi * freq * t[:, None] + phase + offsets)
    if spec.noise_std > 0:
        clean = clean + rng.normal(spec.noise_std, clean.shape)
    return t, clean


def synth_generate(spec: SynthSpec) -> Dataset:
    spec.validate()
    rng = Rng(spec.seed)
    f, a, o = spec.freqs(), spec.amps(), spec.offsets()
    names = tuple(f"class{i}" for i in range(spec.num_classes))
    trials = []
    for role, per_class in (("train", spec.trials_per_class), ("test", spec.test_per_class)):
        for c in range(spec.num_classes):
            for n in range(per_class):
                t, v = _synth_signal(rng, f[c], a[c], o[c], spec.length, spec)
                trials.append(Trial(f"{role}_c{c}_{n:03d}", t, v, c, role, spec.sample_rate))
    seg = spec.segment_length or spec.length
    for n in range(spec.sequence_trials):
        order = rng.permutation(spec.num_classes)
        parts_t, parts_v, parts_y = [], [], []
        for s, c in enumerate(order):
            t, v = _synth_signal(rng, f[c], a[c], o[c], seg, spec, t0=s * seg / spec.sample_rate)
            parts_t.append(t)
            parts_v.append(v)
            parts_y.append(np.full(seg, c, dtype=np.int64))
        trials.append(
            Trial(
                f"sequence_{n:03d}",
                np.concatenate(parts_t),
                np.concatenate(parts_v),
                np.concatenate(parts_y),
                "sequence",
                spec.sample_rate,
            )
        )
    return Dataset(names, trials)


def write_dataset(dataset: Dataset, out_dir) -> Path:
    """Write every trial as CSV plus ``manifest.json``; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    rates = {tr.sample_rate for tr in dataset}
    for tr in dataset:
        name = f"{tr.trial_id}.csv"
        with (out_dir / name).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            if tr.is_sequence:
                w.writerow(["t", "x", "y", "z", "label"])
                for t, (x, y, z), c in zip(tr.t, tr.values, tr.labels):
                    w.writerow([repr(float(t)), repr(float(x)), repr(float(y)), repr(float(z)), dataset.class_names[c]])
            else:
                w.writerow(["t", "x", "y", "z"])
                for t, (x, y, z) in zip(tr.t, tr.values):
                    w.writerow([repr(float(t)), repr(float(x)), repr(float(y)), repr(float(z))])
        entry = {"path": name, "role": tr.role}
        if not tr.is_sequence:
            entry["label"] = dataset.class_names[tr.labels]
        entries.append(entry)
    manifest = {"classes": list(dataset.class_names), "trials": entries}
    if len(rates) == 1:
        manifest["sample_rate"] = rates.pop()
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
    return path
