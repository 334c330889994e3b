import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drnn_har.baseline import (
    FEATURE_NAMES,
    SELECTED,
    BaselineConfig,
    classify_window,
    classify_windows,
    compute_features,
    extract_windows,
    select_features,
    train_baseline,
    trial_features,
    window_count,
    write_feature_csv,
    WindowSpec,
)
from drnn_har.data import Trial
from drnn_har.numeric import Rng
from feature_reference import hand_signals, reference_features, sym3_eigenvalues

F = {name: i for i, name in enumerate(FEATURE_NAMES)}


def _trial(n, labels=0):
    return Trial("w", np.arange(n) / 100, Rng(n).normal(0.3, (n, 3)), labels)


def test_window_counts():
    spec = WindowSpec()
    assert spec.window_len == 500 and spec.shift_len == 250
    assert len(extract_windows(_trial(2000), spec)) == 7
    assert len(extract_windows(_trial(500), spec)) == 1
    with pytest.raises(ValueError, match="shorter"):
        extract_windows(_trial(490), spec)


@given(st.integers(1, 3000), st.integers(1, 400), st.integers(1, 400))
def test_window_count_formula(n, window, shift):
    starts = list(range(0, n - window + 1, shift))
    assert window_count(n, window, shift) == len(starts)


def test_window_offsets_and_majority_label():
    labels = np.array([0] * 300 + [2] * 400 + [1] * 300)
    tr = _trial(1000, labels)
    wins = extract_windows(tr, WindowSpec())
    assert [lab for _, lab in wins] == [0, 2, 1]
    assert np.array_equal(wins[1][0], tr.values[250:750])
    tie = _trial(500, np.array([1] * 250 + [0] * 250))
    assert extract_windows(tie, WindowSpec())[0][1] == 0


def test_window_spec_validation():
    with pytest.raises(ValueError):
        WindowSpec(5.0, 6.0)
    with pytest.raises(ValueError):
        WindowSpec(0.0, 0.0)


# --- features ---------------------------------------------------------------


@pytest.mark.parametrize("name", sorted(hand_signals()))
def test_features_match_reference(name):
    rows = hand_signals()[name]
    got = compute_features(np.array(rows))
    want = reference_features(rows)
    for i, (g, w) in enumerate(zip(got, want)):
        assert math.isclose(g, w, rel_tol=1e-9, abs_tol=1e-9), (FEATURE_NAMES[i], g, w)


def test_features_match_reference_on_noise():
    rows = Rng(3).normal(0.5, (50, 3)) + [0.0, -1.0, 0.2]
    got = compute_features(rows)
    want = reference_features(rows.tolist())
    assert np.allclose(got, want, rtol=1e-9, atol=1e-9)


def test_constant_window():
    f = compute_features(np.full((500, 3), 0.5))
    assert np.array_equal(f[:3], [0.5, 0.5, 0.5])
    assert np.array_equal(f[3:6], [0, 0, 0])
    assert f[F["mean_abs_sum"]] == 1.5
    assert f[F["eig1"]] == 0 and f[F["eig2"]] == 0
    assert f[F["vertical_ratio"]] == pytest.approx(1 / math.sqrt(3), abs=1e-15)
    assert np.all(f[10:24] == 0)
    assert np.all(f[24:] == 0)


def test_sine_window_closed_form():
    n, a, k = 64, 0.8, 3
    f = compute_features(np.array(hand_signals(n)["sine"]))
    assert abs(f[F["mean_x"]]) <= 1e-15
    assert f[F["var_x"]] == pytest.approx(a * a / 2, abs=1e-12)
    assert f[F["eig1"]] == pytest.approx(a * a / 2, abs=1e-12) and f[F["eig2"]] == 0
    assert f[F["vertical_ratio"]] == pytest.approx(1.0, abs=1e-12)
    # one bin holds (a*n/2)^2; averaged over n/2 non-DC bins
    assert f[F["fft_energy_x"]] == pytest.approx(a * a * n / 2, rel=1e-12)
    assert abs(f[F["fft_entropy_x"]]) <= 1e-9
    assert f[F["fft_energy_y"]] == 0 and f[F["fft_entropy_y"]] == 0
    assert f[F["mean_crossings"]] == 4 * k


def test_sine_entropy_below_white_noise():
    n = 500
    t = np.arange(n)
    sine = np.zeros((n, 3))
    sine[:, 0] = np.sin(2 * np.pi * 7 * t / n)
    noise = np.zeros((n, 3))
    noise[:, 0] = Rng(0).normal(1.0, n)
    noise[:, 0] *= np.sqrt(0.5) / noise[:, 0].std()
    fs, fn = compute_features(sine), compute_features(noise)
    assert fs[F["fft_entropy_x"]] < 1e-9 < fn[F["fft_entropy_x"]]
    assert fn[F["fft_entropy_x"]] > 0.8 * math.log(n // 2)


def test_step_window():
    f = compute_features(np.array(hand_signals()["step"]))
    assert f[F["mean_z"]] == pytest.approx(0.6, abs=1e-15)
    assert f[F["var_z"]] == pytest.approx(0.16, abs=1e-15)
    assert f[F["mean_crossings"]] == 1
    assert f[F["zone_crossings"]] == 0 and f[F["out_of_zone"]] == 64


def test_band_crossings():
    f = compute_features(np.array(hand_signals()["band"]))
    assert f[F["zone_crossings"]] == 4
    assert f[F["out_of_zone"]] == 8
    assert f[F["mean_crossings"]] == 4


def test_eigen_oracle_against_known_matrix():
    # eigenvalues 4, 2, 1 by construction
    q, _ = np.linalg.qr(Rng(1).normal(1.0, (3, 3)))
    m = q @ np.diag([4.0, 2.0, 1.0]) @ q.T
    assert np.allclose(sym3_eigenvalues(m.tolist()), [4, 2, 1], atol=1e-12)


def test_duplicate_window_bit_identical():
    w = Rng(5).normal(0.4, (500, 3))
    assert compute_features(w).tobytes() == compute_features(w.copy()).tobytes()


def test_constant_offset():
    w = Rng(6).normal(0.4, (500, 3))
    c = 0.37
    a, b = compute_features(w), compute_features(w + c)
    assert np.allclose(b[:3], a[:3] + c, atol=1e-12)
    assert np.allclose(b[3:6], a[3:6], atol=1e-12)
    assert np.allclose(b[13:15], a[13:15], rtol=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32), st.floats(0.1, 10))
def test_scaling(seed, scale):
    w = Rng(seed).normal(0.4, (120, 3))
    a, b = compute_features(w), compute_features(w * scale)
    s2 = scale * scale
    assert np.allclose(b[3:6], a[3:6] * s2, rtol=1e-9)
    assert np.allclose(b[7:9], a[7:9] * s2, rtol=1e-7, atol=1e-12)
    assert np.allclose(b[16:20], a[16:20] * s2, rtol=1e-9)
    assert np.allclose(b[20:24], a[20:24], atol=1e-9)


def test_bad_window_shape():
    with pytest.raises(ValueError):
        compute_features(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        compute_features(np.zeros((10, 2)))


def test_select_features():
    probe = np.arange(1, 28, dtype=float)
    assert select_features(probe).tolist() == [1, 2, 6, 7, 9, 11, 12, 13, 15, 20, 21, 24, 26]
    assert list(SELECTED) == [1, 2, 6, 7, 9, 11, 12, 13, 15, 20, 21, 24, 26]
    # idempotent on its image: re-embedding the 13 values and selecting again is a no-op
    embedded = np.zeros(27)
    embedded[np.array(SELECTED) - 1] = select_features(probe)
    assert np.array_equal(select_features(embedded), select_features(probe))
    batch = np.vstack([probe, probe * 2])
    assert select_features(batch).shape == (2, 13)
    with pytest.raises(ValueError):
        select_features(np.arange(13.0))


def test_feature_csv(tmp_path):
    X, y = trial_features([_trial(1000, 1)], WindowSpec())
    write_feature_csv(tmp_path / "f.csv", X, y, ["a", "b"])
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert lines[0].split(",") == [*FEATURE_NAMES, "label"]
    assert len(lines) == 4 and lines[1].endswith(",b")


# --- classifier -------------------------------------------------------------


def _blobs(seed, n=60):
    rng = Rng(seed)
    X = rng.normal(0.3, (n, 13))
    y = np.arange(n) % 3
    X[:, 0] += 3 * y
    X[:, 5] -= 2 * y
    return X, y


def test_separable_training_accuracy():
    X, y = _blobs(0)
    model = train_baseline(X, y, 3)
    assert np.array_equal(classify_windows(model, X), y)
    assert classify_window(model, X[4]) == y[4]


def test_separable_two_class():
    rng = Rng(7)
    X = rng.normal(1.0, (40, 13))
    y = (X[:, 3] + 0.5 * X[:, 8] > 0).astype(int)
    X[:, 3] += np.where(y == 1, 0.05, -0.05)
    model = train_baseline(X, y, 2)
    assert np.array_equal(classify_windows(model, X), y)


def test_permutation_stability():
    X, y = _blobs(1, 120)
    Xt, yt = _blobs(2, 120)
    Xt = Xt + Rng(9).normal(0.8, Xt.shape)
    order = Rng(4).permutation(len(X))
    a = np.mean(classify_windows(train_baseline(X, y, 3), Xt) == yt)
    b = np.mean(classify_windows(train_baseline(X[order], y[order], 3), Xt) == yt)
    assert abs(a - b) <= 0.01


def test_constant_features_give_majority():
    X = np.ones((10, 13))
    y = np.array([2] * 7 + [0] * 3)
    model = train_baseline(X, y, 3, BaselineConfig(epochs=200))
    assert classify_window(model, np.ones(13)) == 2


def test_classifier_validation():
    with pytest.raises(ValueError, match="single class"):
        train_baseline(np.ones((4, 13)), np.zeros(4, dtype=int), 3)
    with pytest.raises(ValueError):
        train_baseline(np.ones((4, 12)), np.array([0, 1, 0, 1]), 2)
