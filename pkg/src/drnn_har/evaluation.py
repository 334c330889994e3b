"""Per-sample recognition, recognition rates, confusion matrices and the
throughput benchmark.

A trial's recognition rate is the fraction of its samples classified
correctly; a dataset's rate is the unweighted mean over trials. The
sample-weighted accuracy is reported alongside.

Timing follows the recognition-throughput methodology: run the whole
sequence data through the model one sample at a time, divide the wall time by
the sample count. State setup and file I/O are outside the timed region.
"""

from __future__ import annotations

import csv
import json
import os
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .baseline import BaselineModel, WindowSpec, classify_window, compute_features, extract_windows, select_features
from .data import Trial
from .network import NetworkParams, forward_step, predict_class, reset_state

EVAL_GROUP = 32


@dataclass
class TrialPrediction:
    trial_id: str
    predicted: np.ndarray
    true: np.ndarray
    t: np.ndarray | None = None

    def __post_init__(self):
        if len(self.predicted) != len(self.true):
            raise ValueError("predicted and true tracks differ in length")


def _check_dim(params: NetworkParams, trial: Trial) -> None:
    if trial.values.shape[1] != params.layers[0].input_dim:
        raise ValueError(
            f"trial {trial.trial_id} has {trial.values.shape[1]} channels, model expects {params.layers[0].input_dim}"
        )


def recognize_trial(params: NetworkParams, trial: Trial) -> TrialPrediction:
    """Reference path: one forward step per sample from a zeroed state, no dropout."""
    _check_dim(params, trial)
    state = reset_state(params)
    pred = np.empty(len(trial), dtype=np.int64)
    for n, x in enumerate(trial.values):
        y, state, _ = forward_step(params, state, x)
        pred[n] = predict_class(y)
    return TrialPrediction(trial.trial_id, pred, trial.targets(), trial.t)


def recognize_batch(params: NetworkParams, trials) -> list[TrialPrediction]:
    """Run several trials side by side as independent streams.

    Shorter trials are zero-padded at the end; padding never influences the
    earlier steps, and its outputs are discarded.
    """
    trials = list(trials)
    for tr in trials:
        _check_dim(params, tr)
    n = max(len(t) for t in trials)
    inputs = np.zeros((n, len(trials), trials[0].values.shape[1]))
    for b, tr in enumerate(trials):
        inputs[: len(tr), b] = tr.values
    state = reset_state(params, batch=len(trials))
    pred = np.empty((n, len(trials)), dtype=np.int64)
    for k in range(n):
        y, state, _ = forward_step(params, state, inputs[k])
        pred[k] = np.argmax(y, axis=1)
    return [TrialPrediction(tr.trial_id, pred[: len(tr), b].copy(), tr.targets(), tr.t) for b, tr in enumerate(trials)]


def recognition_rate(pred: TrialPrediction) -> float:
    if len(pred.true) == 0:
        raise ValueError("empty prediction")
    return float(np.mean(pred.predicted == pred.true))


def dataset_rate(preds) -> float:
    preds = list(preds)
    if not preds:
        raise ValueError("no predictions")
    return float(np.mean([recognition_rate(p) for p in preds]))


def weighted_rate(preds) -> float:
    preds = list(preds)
    if not preds:
        raise ValueError("no predictions")
    correct = sum(int(np.sum(p.predicted == p.true)) for p in preds)
    return correct / sum(len(p.true) for p in preds)


def confusion(preds, num_classes: int) -> np.ndarray:
    """Counts with rows = true class, columns = predicted class."""
    m = np.zeros((num_classes, num_classes), dtype=np.int64)
    for p in preds:
        np.add.at(m, (p.true, p.predicted), 1)
    return m


@dataclass
class EvalResult:
    predictions: list[TrialPrediction]
    rate: float
    weighted: float


def evaluate(params: NetworkParams, trials, threads: int = 1) -> EvalResult:
    """Recognize every trial and summarize.

    Trials are processed in fixed groups of :data:`EVAL_GROUP`, so the
    predictions do not depend on ``threads``; only the wall time does.
    """
    trials = list(trials)
    if not trials:
        raise ValueError("no trials to evaluate")
    groups = [trials[i : i + EVAL_GROUP] for i in range(0, len(trials), EVAL_GROUP)]
    if threads > 1 and len(groups) > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(lambda g: recognize_batch(params, g), groups))
    else:
        parts = [recognize_batch(params, g) for g in groups]
    preds = [p for part in parts for p in part]
    return EvalResult(preds, dataset_rate(preds), weighted_rate(preds))


def write_confusion_csv(path, matrix: np.ndarray, class_names) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["true\\pred", *class_names])
        for name, row in zip(class_names, matrix):
            w.writerow([name, *(int(v) for v in row)])


def write_prediction_csv(path, pred: TrialPrediction, class_names) -> None:
    t = pred.t if pred.t is not None else np.arange(len(pred.true), dtype=np.float64)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "true", "pred"])
        for ti, a, b in zip(t, pred.true, pred.predicted):
            w.writerow([repr(float(ti)), class_names[a], class_names[b]])


# --- throughput -------------------------------------------------------------


def environment() -> str:
    cpu = platform.processor() or platform.machine()
    try:
        with open("/proc/cpuinfo", encoding="utf-8") as fh:
            for line in fh:
                if line.startswith("model name"):
                    cpu = line.split(":", 1)[1].strip()
                    break
    except OSError:
        pass
    return (
        f"{cpu}; {os.cpu_count()} logical cores; {platform.system()} {platform.release()}; "
        f"Python {platform.python_version()}; numpy {np.__version__}"
    )


@dataclass
class ThroughputReport:
    kind: str                       # "rnn" or "baseline"
    recognition_ms: float           # rnn: per sample; baseline: classification per window
    total_ms: float
    feature_ms: float | None = None
    samples: int = 0
    windows: int = 0
    repetitions: int = 0
    runs: list[dict] = field(default_factory=list)
    environment: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_text(self) -> str:
        if self.kind == "rnn":
            head = f"RNN: {self.recognition_ms:.4f} ms per sample over {self.samples} samples"
        else:
            head = (
                f"Baseline: feature {self.feature_ms:.4f} ms + classify {self.recognition_ms:.4f} ms"
                f" = {self.total_ms:.4f} ms per window over {self.windows} windows"
            )
        return f"{head} (best of {self.repetitions})\n{self.environment}"


def bench_rnn(params: NetworkParams, trials, repetitions: int = 5, warmup: bool = True) -> ThroughputReport:
    """Best-of-N mean recognition time per sample, single stream, single thread."""
    trials = [t for t in trials]
    if not trials or sum(len(t) for t in trials) == 0:
        raise ValueError("nothing to benchmark")
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    for tr in trials:
        _check_dim(params, tr)
    samples = sum(len(t) for t in trials)

    def one_pass() -> int:
        elapsed = 0
        for tr in trials:
            state = reset_state(params)
            xs = tr.values
            start = time.perf_counter_ns()
            for x in xs:
                y, state, _ = forward_step(params, state, x)
                predict_class(y)
            elapsed += time.perf_counter_ns() - start
        return elapsed

    if warmup:
        one_pass()
    runs = []
    for _ in range(repetitions):
        ns = one_pass()
        runs.append({"total_ms": ns / 1e6, "per_sample_ms": ns / 1e6 / samples})
    best = min(r["per_sample_ms"] for r in runs)
    return ThroughputReport(
        kind="rnn",
        recognition_ms=best,
        total_ms=best,
        samples=samples,
        repetitions=repetitions,
        runs=runs,
        environment=environment(),
    )


def bench_baseline(
    model: BaselineModel, trials, spec: WindowSpec, repetitions: int = 5, warmup: bool = True
) -> ThroughputReport:
    """Best-of-N per-window feature and classification times.

    The reported run is the one with the lowest total, so its feature and
    classification times add up to the reported total.
    """
    windows = [w for tr in trials if len(tr) >= spec.window_len for w, _ in extract_windows(tr, spec)]
    if not windows:
        raise ValueError("no complete windows to benchmark")
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    clock = time.perf_counter_ns

    def one_pass() -> tuple[int, int]:
        feat = cls = 0
        for w in windows:
            t0 = clock()
            fv = compute_features(w)
            t1 = clock()
            classify_window(model, select_features(fv))
            t2 = clock()
            feat += t1 - t0
            cls += t2 - t1
        return feat, cls

    if warmup:
        one_pass()
    n = len(windows)
    runs = []
    for _ in range(repetitions):
        feat, cls = one_pass()
        runs.append({"feature_ms": feat / 1e6 / n, "classify_ms": cls / 1e6 / n, "total_ms": (feat + cls) / 1e6 / n})
    best = min(runs, key=lambda r: r["total_ms"])
    return ThroughputReport(
        kind="baseline",
        recognition_ms=best["classify_ms"],
        total_ms=best["feature_ms"] + best["classify_ms"],
        feature_ms=best["feature_ms"],
        windows=n,
        samples=sum(len(t) for t in trials),
        repetitions=repetitions,
        runs=runs,
        environment=environment(),
    )
