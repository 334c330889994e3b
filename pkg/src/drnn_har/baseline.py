"""Window-feature baseline: 5 s windows, 27 features, a fixed 13-feature subset
and a softmax-regression stand-in classifier.

Feature definitions (1-based numbering, ``s`` is the per-sample intensity
``sqrt(x^2 + y^2 + z^2)``, variances and covariances are population ones):

  1-3    mean of x, y, z
  4-6    variance of x, y, z
  7      mean over samples of |x| + |y| + |z|
  8-9    largest and second-largest eigenvalue of the 3x3 axis covariance
  10     mean of |v| / s, where v is the axis with the largest mean magnitude;
         samples with s == 0 are skipped
  11-13  cov(x,y)/var(z), cov(y,z)/var(x), cov(z,x)/var(y)
  14-16  var(diff x), var(diff y), var(diff s), each over var(diff z)
  17-20  mean |DFT|^2 over the non-DC bins of x, y, z, s (real FFT, no taper)
  21-24  Shannon entropy (nats) of the normalized non-DC power spectrum of
         x, y, z, s; 0 when the spectrum is identically zero
  25     sign changes of s - mean(s)
  26     transitions into or out of the band mean(s) +/- 0.1 G
  27     samples outside that band

Every denominator in 11-16 is floored at 1e-12.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .data import Trial
from .numeric import Rng, _softmax
from .training import AdamConfig, adam_step

FEATURE_NAMES = (
    "mean_x", "mean_y", "mean_z",
    "var_x", "var_y", "var_z",
    "mean_abs_sum",
    "eig1", "eig2",
    "vertical_ratio",
    "cov_xy_var_z", "cov_yz_var_x", "cov_zx_var_y",
    "dvar_x_z", "dvar_y_z", "dvar_s_z",
    "fft_energy_x", "fft_energy_y", "fft_energy_z", "fft_energy_s",
    "fft_entropy_x", "fft_entropy_y", "fft_entropy_z", "fft_entropy_s",
    "mean_crossings", "zone_crossings", "out_of_zone",
)
SELECTED = (1, 2, 6, 7, 9, 11, 12, 13, 15, 20, 21, 24, 26)
_SELECTED_IDX = np.array(SELECTED) - 1

RATIO_FLOOR = 1e-12
ZONE_HALF_WIDTH = 0.1


@dataclass(frozen=True)
class WindowSpec:
    window_seconds: float = 5.0
    shift_seconds: float = 2.5
    sample_rate: float = 100.0

    def __post_init__(self):
        if self.window_seconds <= 0 or self.shift_seconds <= 0 or self.sample_rate <= 0:
            raise ValueError("window, shift and sample rate must be positive")
        if self.shift_seconds > self.window_seconds:
            raise ValueError("shift must not exceed the window length")

    @property
    def window_len(self) -> int:
        return int(round(self.window_seconds * self.sample_rate))

    @property
    def shift_len(self) -> int:
        return int(round(self.shift_seconds * self.sample_rate))


def window_count(n: int, window: int, shift: int) -> int:
    return (n - window) // shift + 1 if n >= window else 0


def extract_windows(trial: Trial, spec: WindowSpec) -> list[tuple[np.ndarray, int]]:
    """Full windows at offsets 0, shift, 2*shift, ...; label is the per-window majority."""
    w, s = spec.window_len, spec.shift_len
    n = len(trial)
    if n < w:
        raise ValueError(f"trial {trial.trial_id} has {n} samples, shorter than one {w}-sample window")
    targets = trial.targets()
    out = []
    for start in range(0, n - w + 1, s):
        label = int(np.argmax(np.bincount(targets[start : start + w])))
        out.append((trial.values[start : start + w], label))
    return out


def _spectrum(a: np.ndarray) -> np.ndarray:
    # Non-DC bins are unaffected by removing the mean; a constant series is
    # exactly zero there, which the explicit check keeps free of FFT round-off.
    if a.size < 2 or np.ptp(a) == 0:
        return np.zeros(max(a.size // 2, 0))
    return np.abs(np.fft.rfft(a - a.mean())[1:]) ** 2


def _entropy(power: np.ndarray) -> float:
    total = power.sum()
    if total <= 0:
        return 0.0
    p = power[power > 0] / total
    return float(-np.sum(p * np.log(p)))


def _diff_var(a: np.ndarray) -> float:
    return float(np.var(np.diff(a))) if a.size > 1 else 0.0


def compute_features(window) -> np.ndarray:
    """The 27 window features, in the order of :data:`FEATURE_NAMES`."""
    w = np.asarray(window, dtype=np.float64)
    if w.ndim != 2 or w.shape[1] != 3 or len(w) == 0:
        raise ValueError(f"window must be a non-empty (N, 3) array, got shape {w.shape}")
    x, y, z = w.T
    s = np.sqrt(np.einsum("ij,ij->i", w, w))

    mean = w.mean(axis=0)
    centered = w - mean
    cov = centered.T @ centered / len(w)
    var = np.diag(cov).copy()
    eig = np.clip(np.linalg.eigvalsh(cov)[::-1], 0.0, None)

    vertical = int(np.argmax(np.abs(w).mean(axis=0)))
    nz = s > 0
    vertical_ratio = float(np.mean(np.abs(w[nz, vertical]) / s[nz])) if nz.any() else 0.0

    def ratio(num, den):
        return float(num / max(den, RATIO_FLOOR))

    dz = _diff_var(z)
    spectra = [_spectrum(a) for a in (x, y, z, s)]

    d = s - s.mean()
    positive = d > 0
    outside = np.abs(d) > ZONE_HALF_WIDTH

    return np.array(
        [
            *mean,
            *var,
            float(np.abs(w).sum(axis=1).mean()),
            eig[0], eig[1],
            vertical_ratio,
            ratio(cov[0, 1], var[2]), ratio(cov[1, 2], var[0]), ratio(cov[2, 0], var[1]),
            ratio(_diff_var(x), dz), ratio(_diff_var(y), dz), ratio(_diff_var(s), dz),
            *(float(p.mean()) if p.size else 0.0 for p in spectra),
            *(_entropy(p) for p in spectra),
            int(np.count_nonzero(positive[1:] != positive[:-1])),
            int(np.count_nonzero(outside[1:] != outside[:-1])),
            int(np.count_nonzero(outside)),
        ],
        dtype=np.float64,
    )


def select_features(fv) -> np.ndarray:
    """Project 27-vectors (any leading shape) onto the fixed 13-feature subset."""
    fv = np.asarray(fv, dtype=np.float64)
    if fv.shape[-1] != len(FEATURE_NAMES):
        raise ValueError(f"expected {len(FEATURE_NAMES)} features, got {fv.shape[-1]}")
    return fv[..., _SELECTED_IDX]


def trial_features(trials, spec: WindowSpec) -> tuple[np.ndarray, np.ndarray]:
    """Stacked 27-feature rows and window labels for every window of every trial."""
    rows, labels = [], []
    for tr in trials:
        for win, label in extract_windows(tr, spec):
            rows.append(compute_features(win))
            labels.append(label)
    return np.array(rows).reshape(-1, len(FEATURE_NAMES)), np.array(labels, dtype=np.int64)


def write_feature_csv(path, features: np.ndarray, labels: np.ndarray, class_names) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*FEATURE_NAMES, "label"])
        for row, label in zip(features, labels):
            w.writerow([*(repr(float(v)) for v in row), class_names[label]])


# --- stand-in classifier ----------------------------------------------------


@dataclass(frozen=True)
class BaselineConfig:
    epochs: int = 200
    batch_size: int = 32
    adam: AdamConfig = AdamConfig(lr=0.05)
    seed: int = 0


@dataclass(frozen=True)
class BaselineModel:
    mean: np.ndarray
    std: np.ndarray
    W: np.ndarray      # (H, 13)
    b: np.ndarray      # (H,)

    def logits(self, selected: np.ndarray) -> np.ndarray:
        return ((selected - self.mean) / self.std) @ self.W.T + self.b


def train_baseline(features, labels, num_classes: int, cfg: BaselineConfig = BaselineConfig()) -> BaselineModel:
    """Multinomial softmax regression on z-scored 13-feature vectors, mini-batch Adam."""
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if X.ndim != 2 or X.shape[1] != len(SELECTED) or len(X) != len(y) or len(X) == 0:
        raise ValueError("features must be an (n, 13) array with one label per row")
    if len(np.unique(y)) < 2:
        raise ValueError("training set has a single class; nothing to discriminate")
    if y.min() < 0 or y.max() >= num_classes:
        raise ValueError("label outside the class range")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std > RATIO_FLOOR, std, 1.0)
    Z = (X - mean) / std

    rng = Rng(cfg.seed)
    params = [np.zeros((num_classes, X.shape[1])), np.zeros(num_classes)]
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    t = 0
    onehot = np.eye(num_classes)[y]
    for _ in range(cfg.epochs):
        order = rng.permutation(len(Z))
        for start in range(0, len(Z), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            probs = _softmax(Z[idx] @ params[0].T + params[1])
            err = (probs - onehot[idx]) / len(idx)
            t += 1
            params, m, v = adam_step(params, [err.T @ Z[idx], err.sum(axis=0)], m, v, t, cfg.adam)
    return BaselineModel(mean, std, params[0], params[1])


def classify_window(model: BaselineModel, selected) -> int:
    return int(np.argmax(model.logits(np.asarray(selected, dtype=np.float64))))


def classify_windows(model: BaselineModel, selected) -> np.ndarray:
    return np.argmax(model.logits(np.asarray(selected, dtype=np.float64)), axis=-1)
