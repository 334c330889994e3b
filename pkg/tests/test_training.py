import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drnn_har.data import SynthSpec, Trial, synth_generate
from drnn_har.network import NetworkConfig, NetworkState, init_network, reset_state
from drnn_har.numeric import Rng, l2_norm
from drnn_har.training import (
    AdamConfig,
    AdamState,
    TrainConfig,
    adam_update,
    bptt_chunk,
    chunk_backward,
    chunk_forward,
    clip_gradients,
    sample_masks,
    train,
    train_epoch,
    write_stats,
)


def finite_difference(params, fn, step=1e-5):
    """Central differences of ``fn()`` with respect to every parameter scalar."""
    out = params.zeros_like()
    for a, g in zip(params.arrays(), out.arrays()):
        for idx in np.ndindex(a.shape):
            old = a[idx]
            a[idx] = old + step
            up = fn()
            a[idx] = old - step
            down = fn()
            a[idx] = old
            g[idx] = (up - down) / (2 * step)
    return out


def max_rel_error(analytic, numeric, floor=1e-7):
    worst = 0.0
    for a, n in zip(analytic.arrays(), numeric.arrays()):
        diff = np.abs(a - n)
        rel = diff / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-300)
        worst = max(worst, float(np.max(np.where(diff <= floor, 0.0, rel))))
    return worst


def test_single_unit_gradient_matches_finite_differences():
    rng = Rng(21)
    p = init_network(NetworkConfig(3, 1, 1, 3), rng).map(lambda a: a * 5 + 0.05)
    state = NetworkState([np.array([0.3])], [np.array([-0.4])])
    x = np.array([[0.5, -1.0, 2.0]])
    loss, grads, _ = bptt_chunk(p, state, x, 2)
    numeric = finite_difference(p, lambda: bptt_chunk(p, state, x, 2)[0])
    assert max_rel_error(grads, numeric) <= 1e-6


def test_zero_params_loss_is_t_log_h():
    p = init_network(NetworkConfig(3, 2, 4, 6), Rng(0)).map(np.zeros_like)
    loss, grads, _ = bptt_chunk(p, reset_state(p), np.zeros((7, 3)), 4)
    assert loss == pytest.approx(7 * math.log(6), abs=1e-12)


def test_batch_loss_is_mean_over_streams():
    p = init_network(NetworkConfig(3, 1, 4, 3), Rng(5))
    rng = Rng(6)
    x = rng.normal(1.0, (5, 2, 3))
    loss_b, g_b, _ = bptt_chunk(p, reset_state(p, batch=2), x, np.array([0, 2]))
    l0, g0, _ = bptt_chunk(p, reset_state(p), x[:, 0], 0)
    l1, g1, _ = bptt_chunk(p, reset_state(p), x[:, 1], 2)
    assert loss_b == pytest.approx((l0 + l1) / 2, rel=1e-13)
    for a, b, c in zip(g_b.arrays(), g0.arrays(), g1.arrays()):
        assert np.allclose(a, (b + c) / 2, atol=1e-14)


def _toy(seed):
    rng = Rng(seed)
    p = init_network(NetworkConfig(3, 2, 3, 4), rng).map(lambda a: a * 8)
    x = rng.normal(1.0, (8, 1, 3))
    targets = np.array([[1], [1], [3], [0], [2], [2], [1], [0]])
    return p, x, targets


def test_split_chunks_match_double_chunk_forward():
    p, x, tg = _toy(1)
    s0 = reset_state(p, batch=1)
    loss_full, g_full, s_full = bptt_chunk(p, s0, x, tg)
    l1, g1, s_mid = bptt_chunk(p, s0, x[:4], tg[:4])
    l2, g2, s_end = bptt_chunk(p, s_mid, x[4:], tg[4:])
    assert l1 + l2 == pytest.approx(loss_full, rel=1e-14)
    for a, b in zip(s_full.h + s_full.c, s_end.h + s_end.c):
        assert np.array_equal(a, b)


def test_truncation_drops_exactly_cross_boundary_terms():
    p, x, tg = _toy(2)
    s0 = reset_state(p, batch=1)
    _, g_full, _ = bptt_chunk(p, s0, x, tg)
    tr1, s_mid = chunk_forward(p, s0, x[:4])
    tr2, _ = chunk_forward(p, s_mid, x[4:])
    g2, d_mid = chunk_backward(p, tr2, tg[4:])
    g1_trunc, _ = chunk_backward(p, tr1, tg[:4])
    g1_carry, _ = chunk_backward(p, tr1, tg[:4], d_state_out=d_mid)
    cross = [c - t for c, t in zip(g1_carry.arrays(), g1_trunc.arrays())]
    # full unroll = truncated pieces + the cross-boundary delta terms
    for full, a, b, c in zip(g_full.arrays(), g1_trunc.arrays(), g2.arrays(), cross):
        assert np.allclose(full, a + b + c, rtol=1e-12, atol=1e-14)
    assert max(np.abs(c).max() for c in cross) > 1e-6
    # the second chunk's gradient ignores how its input state was produced
    _, g2_alone, _ = bptt_chunk(p, s_mid, x[4:], tg[4:])
    for a, b in zip(g2.arrays(), g2_alone.arrays()):
        assert np.array_equal(a, b)


def test_truncated_gradient_matches_fd_with_frozen_state():
    p, x, tg = _toy(3)
    rng = Rng(30)
    s_in = NetworkState([rng.normal(0.4, (1, 3)) for _ in range(2)], [rng.normal(0.4, (1, 3)) for _ in range(2)])
    masks = sample_masks(0.5, [3, 3], rng)
    _, g, _ = bptt_chunk(p, s_in, x[:5], tg[:5], masks)
    numeric = finite_difference(p, lambda: bptt_chunk(p, s_in, x[:5], tg[:5], masks)[0])
    assert max_rel_error(g, numeric) <= 1e-5


# --- clipping ---------------------------------------------------------------


def _grads_from(values):
    p = init_network(NetworkConfig(1, 1, 1, 2), Rng(0)).map(np.zeros_like)
    flat = iter(values)
    g = p.map(lambda a: np.array([next(flat, 0.0) for _ in range(a.size)]).reshape(a.shape))
    return g


def test_clip_examples():
    g = _grads_from([6.0, 8.0])
    clipped = clip_gradients(g, 5.0)
    assert np.allclose(np.concatenate([a.ravel() for a in clipped.arrays()])[:2], [3.0, 4.0], atol=1e-15)
    small = _grads_from([1.8, 2.4])   # norm 3
    assert clip_gradients(small, 5.0) is small


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32), st.floats(0.01, 100))
def test_clip_property(seed, c):
    rng = Rng(seed)
    g = init_network(NetworkConfig(3, 1, 3, 2), rng).map(lambda a: a * rng.random() * 1000)
    out = clip_gradients(g, c)
    assert l2_norm(out.arrays()) <= c + 1e-9


def test_adam_zero_gradient():
    p = init_network(NetworkConfig(3, 1, 2, 2), Rng(0))
    same, st = adam_update(p, p.zeros_like(), AdamState.zeros(p))
    assert all(np.array_equal(a, b) for a, b in zip(same.arrays(), p.arrays()))
    assert st.t == 1
    # non-zero moments decay under a zero gradient
    warm = AdamState(p.zeros_like().map(lambda a: a + 0.5), p.zeros_like().map(lambda a: a + 0.25), 3)
    _, st = adam_update(p, p.zeros_like(), warm)
    assert np.allclose(st.m.arrays()[0], 0.45) and np.allclose(st.v.arrays()[0], 0.24975)


def test_adam_first_step_hand_value():
    p = _grads_from([0.0]).map(np.zeros_like)
    g = _grads_from([1.0])
    new_p, st = adam_update(p, g, AdamState.zeros(p), AdamConfig(1e-3, 0.9, 0.999, 1e-8))
    # m_hat = 1, v_hat = 1 at t=1
    assert new_p.arrays()[0].ravel()[0] == pytest.approx(-0.001 / (1 + 1e-8), rel=1e-12)
    assert st.t == 1


def test_adam_symmetric():
    p = _grads_from([0.3, 0.3])
    g = _grads_from([0.7, 0.7])
    new_p, _ = adam_update(p, g, AdamState.zeros(p))
    w = new_p.arrays()[0].ravel()
    assert w[0] == w[1]


# --- dropout ----------------------------------------------------------------


def test_masks():
    assert all(np.array_equal(m, np.ones(7)) for m in sample_masks(0.0, [7, 7], Rng(0)))
    big = sample_masks(0.5, [100000], Rng(1))[0]
    assert abs(np.mean(big == 0) - 0.5) <= 0.01
    assert set(np.unique(big)) == {0.0, 2.0}
    assert set(np.unique(sample_masks(0.3, [1000], Rng(2))[0])) == {0.0, 1 / 0.7}
    with pytest.raises(ValueError):
        sample_masks(1.0, [3], Rng(0))


def test_zero_dropout_matches_unmasked_step():
    p, x, tg = _toy(4)
    s = reset_state(p, batch=1)
    masks = sample_masks(0.0, [3, 3], Rng(0))
    l1, g1, s1 = bptt_chunk(p, s, x, tg, masks)
    l2, g2, s2 = bptt_chunk(p, s, x, tg)
    assert l1 == l2
    assert all(np.array_equal(a, b) for a, b in zip(g1.arrays(), g2.arrays()))


# --- epoch loop -------------------------------------------------------------


def _small_data(seed=0, **kw):
    spec = SynthSpec(num_classes=3, length=240, trials_per_class=6, test_per_class=2, sequence_trials=1,
                     segment_length=120, amplitudes=(0.2, 0.5, 1.0), seed=seed, **kw)
    return synth_generate(spec)


def test_epoch_deterministic():
    ds = _small_data()
    cfg = TrainConfig(truncated_time=10, batch_size=5, window=60, epochs=2, seed=3)
    runs = [train(NetworkConfig(3, 1, 4, 3), cfg, ds) for _ in range(2)]
    (pa, sa), (pb, sb) = runs
    assert all(a.tobytes() == b.tobytes() for a, b in zip(pa.arrays(), pb.arrays()))
    assert [vars(s) | {"seconds": 0} for s in sa] == [vars(s) | {"seconds": 0} for s in sb]


def test_one_update_per_epoch():
    tr = Trial("one", np.arange(12) / 100, Rng(0).normal(1, (12, 3)), 1)
    p = init_network(NetworkConfig(3, 1, 2, 2), Rng(0))
    cfg = TrainConfig(truncated_time=12, batch_size=1, window=12, dropout=0.0)
    p2, st, loss, updates = train_epoch(p, AdamState.zeros(p), [tr], cfg, Rng(1))
    assert updates == 1 and st.t == 1


def test_final_short_range_and_partial_batch():
    ds = _small_data()
    p = init_network(NetworkConfig(3, 1, 3, 3), Rng(0))
    cfg = TrainConfig(truncated_time=25, batch_size=4, window=60)
    _, st, _, updates = train_epoch(p, AdamState.zeros(p), ds.by_role("train").trials, cfg, Rng(2))
    # 18 trials -> 5 batches (last has 2); 60 steps -> ranges of 25, 25, 10
    assert updates == 5 * 3


def test_short_trial_rejected():
    tr = Trial("short", np.arange(5) / 100, np.zeros((5, 3)), 0)
    p = init_network(NetworkConfig(3, 1, 2, 2), Rng(0))
    with pytest.raises(ValueError, match="shorter"):
        train_epoch(p, AdamState.zeros(p), [tr], TrainConfig(window=10), Rng(0))
    with pytest.raises(ValueError, match="empty"):
        train_epoch(p, AdamState.zeros(p), [], TrainConfig(window=10), Rng(0))


def test_train_zero_epochs_and_log_length(tmp_path):
    ds = _small_data()
    net = NetworkConfig(3, 1, 3, 3)
    p0 = init_network(net, Rng(5))
    p, stats = train(net, TrainConfig(epochs=0, seed=5), ds)
    assert stats == [] and all(np.array_equal(a, b) for a, b in zip(p.arrays(), p0.arrays()))
    _, stats = train(net, TrainConfig(truncated_time=10, batch_size=6, window=60, epochs=3), ds)
    assert [s.epoch for s in stats] == [1, 2, 3]
    assert all(0 <= s.train_acc <= 1 and 0 <= s.test_acc <= 1 and 0 <= s.seq_acc <= 1 for s in stats)
    write_stats(tmp_path / "s.csv", stats)
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,train_acc,test_acc,seq_acc" and len(lines) == 4


def test_loss_decreases_on_learnable_set():
    ds = synth_generate(SynthSpec(num_classes=3, length=240, trials_per_class=12, test_per_class=0, sequence_trials=0,
                                  amplitudes=(0.2, 0.5, 1.0), noise_std=0.02, seed=1))
    cfg = TrainConfig(truncated_time=20, batch_size=12, window=200, dropout=0.0, adam=AdamConfig(lr=0.002))
    p = init_network(NetworkConfig(3, 1, 8, 3), Rng(1))
    st = AdamState.zeros(p)
    rng = Rng(1)
    losses = []
    for _ in range(11):
        p, st, loss, _ = train_epoch(p, st, ds.by_role("train").trials, cfg, rng)
        losses.append(loss)
    drops = sum(b < a for a, b in zip(losses, losses[1:]))
    assert drops >= 8, losses
    assert losses[-1] < 0.8 * losses[0]
