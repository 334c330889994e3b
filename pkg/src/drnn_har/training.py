"""Truncated BPTT, gradient clipping, Adam, dropout and the epoch loop.

One epoch: shuffle the training trials into mini-batches; for each batch pick
one random start ``k``, cut the window ``[k, k+K')`` from every trial, split
it into ranges of ``T`` steps and run forward/backward/clip/Adam on each
range. Recurrent state is zeroed at the start of each batch and carried (as
values only) from one range to the next.

Loss for a range is the cross entropy summed over its time steps and
averaged over the trials of the batch.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, make_minibatches, slice_window
from .network import NetworkConfig, NetworkParams, NetworkState, forward_step, init_network, reset_state
from .numeric import LOG_FLOOR, Rng, l2_norm

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    truncated_time: int = 30
    clip: float = 5.0
    dropout: float = 0.5
    batch_size: int = 20
    window: int = 1200
    epochs: int = 80
    adam: AdamConfig = field(default_factory=AdamConfig)
    seed: int = 0

    def __post_init__(self):
        if self.truncated_time < 1:
            raise ValueError("truncated_time must be >= 1")
        if self.clip <= 0:
            raise ValueError("clip threshold must be positive")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout rate must be in [0, 1)")
        if self.batch_size < 1 or self.window < 1 or self.epochs < 0:
            raise ValueError("batch_size and window must be positive, epochs non-negative")

    def to_dict(self) -> dict:
        return {
            "truncated_time": self.truncated_time,
            "clip": self.clip,
            "dropout": self.dropout,
            "batch_size": self.batch_size,
            "window": self.window,
            "epochs": self.epochs,
            "adam": vars(self.adam).copy(),
            "seed": self.seed,
        }


@dataclass
class AdamState:
    m: NetworkParams
    v: NetworkParams
    t: int = 0

    @classmethod
    def zeros(cls, params: NetworkParams) -> "AdamState":
        return cls(params.zeros_like(), params.zeros_like(), 0)


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    train_acc: float | None = None
    test_acc: float | None = None
    seq_acc: float | None = None
    seconds: float = 0.0
    updates: int = 0


# --- gradients --------------------------------------------------------------


def _batched(state: NetworkState) -> tuple[NetworkState, bool]:
    if state.h[0].ndim == 1:
        return NetworkState([h[None] for h in state.h], [c[None] for c in state.c]), True
    return state, False


def _unbatched(state: NetworkState) -> NetworkState:
    return NetworkState([h[0] for h in state.h], [c[0] for c in state.c])


def _targets(target, steps: int, batch: int) -> np.ndarray:
    t = np.asarray(target, dtype=np.int64)
    if t.ndim == 0:
        return np.full((steps, batch), int(t))
    if t.ndim == 1 and batch > 1 and t.shape == (batch,):
        return np.broadcast_to(t, (steps, batch))
    if t.ndim == 1 and t.shape == (steps,):
        return t[:, None].repeat(batch, axis=1)
    if t.shape == (steps, batch):
        return t
    raise ValueError(f"targets of shape {t.shape} do not fit {steps} steps x {batch} streams")


def chunk_forward(params: NetworkParams, state_in: NetworkState, inputs: np.ndarray, masks=None):
    """Forward over a batched chunk ``(T, B, I)``; returns ``(traces, state_out)``."""
    traces = []
    state = state_in
    for x in inputs:
        _, state, tr = forward_step(params, state, x, masks)
        traces.append(tr)
    return traces, state


def chunk_loss(traces, targets: np.ndarray) -> float:
    batch = targets.shape[1]
    total = 0.0
    for tr, d in zip(traces, targets):
        total -= float(np.sum(np.log(np.maximum(tr.y[np.arange(batch), d], LOG_FLOOR))))
    return total / batch


def chunk_backward(params: NetworkParams, traces, targets: np.ndarray, masks=None, d_state_out=None):
    """Backpropagate through one chunk.

    Returns ``(grads, d_state_in)``. ``d_state_out`` is an optional incoming
    gradient on the chunk's final state; truncated BPTT passes ``None`` and
    discards ``d_state_in``.
    """
    batch = targets.shape[1]
    grads = params.zeros_like()
    n_layers = len(params.layers)
    if d_state_out is None:
        dh_next = [np.zeros_like(tr_h.h) for tr_h in traces[-1].layers]
        dc_next = [np.zeros_like(tr_h.c) for tr_h in traces[-1].layers]
    else:
        dh_next = [a.copy() for a in d_state_out.h]
        dc_next = [a.copy() for a in d_state_out.c]
    W_out = params.output.W
    rows = np.arange(batch)

    for tr, d in zip(reversed(traces), targets[::-1]):
        dv = tr.y.copy()
        dv[rows, d] -= 1.0
        dv /= batch
        grads.output.W += dv.T @ tr.top
        grads.output.b += dv.sum(axis=0)
        d_up = dv @ W_out
        for idx in range(n_layers - 1, -1, -1):
            layer = params.layers[idx]
            lt = tr.layers[idx]
            j = layer.units
            if masks is not None:
                d_up = d_up * masks[idx]
            dh = d_up + dh_next[idx]
            i, f, g, o = (lt.gates[:, k * j : (k + 1) * j] for k in range(4))
            dc = dc_next[idx] + dh * o * (1.0 - lt.tanh_c**2)
            dz = np.concatenate(
                [
                    dc * g * i * (1.0 - i),
                    dc * lt.c_prev * f * (1.0 - f),
                    dc * i * (1.0 - g**2),
                    dh * lt.tanh_c * o * (1.0 - o),
                ],
                axis=1,
            )
            gl = grads.layers[idx]
            gl.W += dz.T @ lt.x
            gl.R += dz.T @ lt.h_prev
            gl.b += dz.sum(axis=0)
            dh_next[idx] = dz @ layer.R
            dc_next[idx] = dc * f
            d_up = dz @ layer.W
    return grads, NetworkState(dh_next, dc_next)


def bptt_chunk(params: NetworkParams, state_in: NetworkState, inputs, target, masks=None):
    """Loss, truncated-BPTT gradients and carried state for one chunk.

    ``inputs`` is ``(T, I)`` for one stream or ``(T, B, I)`` for a batch;
    ``target`` is a class index, per-stream indices ``(B,)``, or per-step
    indices ``(T,)``/``(T, B)``. Gradients stop at the chunk's oldest step;
    ``state_out`` carries forward values only.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim not in (2, 3) or len(inputs) == 0:
        raise ValueError(f"inputs must be a non-empty (T, I) or (T, B, I) array, got {inputs.shape}")
    single = inputs.ndim == 2
    if single:
        inputs = inputs[:, None, :]
    state, _ = _batched(state_in)
    if state.h[0].shape[0] != inputs.shape[1]:
        raise ValueError("state batch size does not match inputs")
    steps, batch = inputs.shape[:2]
    targets = _targets(target, steps, batch)
    traces, state_out = chunk_forward(params, state, inputs, masks)
    loss = chunk_loss(traces, targets)
    grads, _ = chunk_backward(params, traces, targets, masks)
    return loss, grads, _unbatched(state_out) if single else state_out


def clip_gradients(g: NetworkParams, c: float) -> NetworkParams:
    """Rescale to global L2 norm ``c`` when the norm reaches ``c``; otherwise return ``g`` as is."""
    if c <= 0:
        raise ValueError("clip threshold must be positive")
    norm = l2_norm(g.arrays())
    if norm >= c:
        scale = c / norm
        return g.map(lambda a: a * scale)
    return g


def adam_step(params, grads, m, v, t: int, hyper: AdamConfig):
    """Adam on parallel lists of arrays; ``t`` is the 1-based step being taken.

    Returns new ``(params, m, v)`` lists; inputs are left untouched.
    """
    b1, b2 = hyper.beta1, hyper.beta2
    m = [b1 * mi + (1 - b1) * gi for mi, gi in zip(m, grads)]
    v = [b2 * vi + (1 - b2) * gi * gi for vi, gi in zip(v, grads)]
    c1 = 1 - b1**t
    c2 = 1 - b2**t
    new = [p - hyper.lr * (mi / c1) / (np.sqrt(vi / c2) + hyper.eps) for p, mi, vi in zip(params, m, v)]
    return new, m, v


def _rebuild(template: NetworkParams, values) -> NetworkParams:
    it = iter(values)
    return template.map(lambda _: next(it))


def adam_update(params: NetworkParams, g: NetworkParams, st: AdamState, hyper: AdamConfig = AdamConfig()):
    """Bias-corrected Adam step; returns ``(params', state')`` without mutating inputs."""
    t = st.t + 1
    new, m, v = adam_step(params.arrays(), g.arrays(), st.m.arrays(), st.v.arrays(), t, hyper)
    return _rebuild(params, new), AdamState(_rebuild(params, m), _rebuild(params, v), t)


def sample_masks(p: float, widths, rng: Rng) -> list[np.ndarray]:
    """Inverted-dropout masks: 0 with probability ``p``, else ``1/(1-p)``."""
    if not 0 <= p < 1:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    scale = 1.0 / (1.0 - p)
    return [np.where(rng.random(w) >= p, scale, 0.0) for w in widths]


# --- epoch loop -------------------------------------------------------------


def train_epoch(params: NetworkParams, adam_state: AdamState, train_trials, cfg: TrainConfig, rng: Rng):
    """One pass over every mini-batch; returns ``(params, adam_state, mean per-sample loss, updates)``."""
    trials = list(train_trials)
    if not trials:
        raise ValueError("training set is empty")
    short = [t.trial_id for t in trials if len(t) < cfg.window]
    if short:
        raise ValueError(f"trials shorter than the {cfg.window}-step window: {short[:5]}")
    widths = [l.units for l in params.layers]
    batch_losses = []
    updates = 0
    for batch in make_minibatches(trials, cfg.batch_size, rng):
        k = rng.integers(0, min(len(t) for t in batch) - cfg.window)
        windows = [slice_window(t, k, cfg.window) for t in batch]
        inputs = np.stack([w[0] for w in windows], axis=1)     # (K', B, 3)
        targets = np.stack([w[1] for w in windows], axis=1)    # (K', B)
        state = reset_state(params, batch=len(batch))
        total = 0.0
        for start in range(0, cfg.window, cfg.truncated_time):
            stop = min(start + cfg.truncated_time, cfg.window)
            masks = sample_masks(cfg.dropout, widths, rng) if cfg.dropout > 0 else None
            traces, state = chunk_forward(params, state, inputs[start:stop], masks)
            total += chunk_loss(traces, targets[start:stop])
            grads, _ = chunk_backward(params, traces, targets[start:stop], masks)
            grads = clip_gradients(grads, cfg.clip)
            params, adam_state = adam_update(params, grads, adam_state, cfg.adam)
            updates += 1
        batch_losses.append(total / cfg.window)
    return params, adam_state, float(np.mean(batch_losses)), updates


def train(
    net_config: NetworkConfig,
    cfg: TrainConfig,
    dataset: Dataset,
    params: NetworkParams | None = None,
    threads: int = 1,
    on_epoch=None,
):
    """Train for ``cfg.epochs`` epochs, evaluating after each one.

    Uses the ``train`` role for updates and reports recognition rates for
    every role present. Returns ``(params, stats)``.
    """
    from .evaluation import evaluate

    rng = Rng(cfg.seed)
    if params is None:
        params = init_network(net_config, rng)
    train_set = dataset.by_role("train")
    test_set = dataset.by_role("test")
    seq_set = dataset.by_role("sequence")
    if cfg.epochs > 0 and not len(train_set):
        raise ValueError("dataset has no training trials")
    adam_state = AdamState.zeros(params)
    stats = []
    for epoch in range(1, cfg.epochs + 1):
        started = time.perf_counter()
        params, adam_state, loss, updates = train_epoch(params, adam_state, train_set.trials, cfg, rng)
        row = EpochStats(epoch, loss, updates=updates)
        row.train_acc = evaluate(params, train_set.trials, threads=threads).rate
        if len(test_set):
            row.test_acc = evaluate(params, test_set.trials, threads=threads).rate
        if len(seq_set):
            row.seq_acc = evaluate(params, seq_set.trials, threads=threads).rate
        row.seconds = time.perf_counter() - started
        log.info(
            "epoch %d loss %.4f train %.4f test %s seq %s (%.1fs)",
            epoch, loss, row.train_acc, row.test_acc, row.seq_acc, row.seconds,
        )
        stats.append(row)
        if on_epoch is not None:
            on_epoch(row, params)
    return params, stats


STATS_COLUMNS = ("epoch", "train_loss", "train_acc", "test_acc", "seq_acc")


def _fmt(value) -> str:
    return "" if value is None else repr(float(value))


def write_stats(path, stats, with_seconds: bool = False) -> None:
    """Per-epoch CSV. Wall-clock ``seconds`` is opt-in so default output is reproducible."""
    cols = STATS_COLUMNS + (("seconds",) if with_seconds else ())
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for s in stats:
            row = [str(s.epoch), _fmt(s.train_loss), _fmt(s.train_acc), _fmt(s.test_acc), _fmt(s.seq_acc)]
            if with_seconds:
                row.append(f"{s.seconds:.3f}")
            w.writerow(row)
