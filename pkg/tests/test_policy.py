import json
import math

import numpy as np
import pytest

from calreason.errors import ShapeMismatch, VersionMismatch
from calreason.grammar import BOS, EOS, PAD, tokenize
from calreason.optim import Adam
from calreason.policy import (
    DEFAULT_CONFIG,
    PolicyConfig,
    forward_step,
    greedy_decode,
    init_params,
    load_params,
    logprob_grad,
    sample_sequence,
    save_params,
    sequence_logprob,
)
from oracles import central_difference

V = 128


def random_seq(rng, length):
    body = rng.integers(4, V, size=length)
    return np.concatenate([[BOS], body, [EOS]])


def test_parameter_count():
    p = init_params(0, 0.1)
    assert DEFAULT_CONFIG.input_dim == 160
    assert sum(a.size for a in p.arrays()) == 18_624
    assert p.W1.shape == (64, 160) and p.W2.shape == (128, 64)


def test_init_bounds_and_determinism():
    p = init_params(7, 0.1)
    assert all(np.isfinite(a).all() and np.abs(a).max() <= 0.1 for a in p.arrays())
    assert p.equals(init_params(7, 0.1))
    assert not p.equals(init_params(8, 0.1))
    assert not init_params(0, 0.0).flat().any()
    with pytest.raises(ValueError):
        init_params(0, -1.0)


def test_zero_params_give_uniform_steps(rng):
    p = init_params(0, 0.0)
    probs = forward_step(p, rng.normal(size=24), BOS, 0)
    np.testing.assert_allclose(probs, np.full(V, 1 / V), rtol=0, atol=1e-15)


def test_step_distribution_is_normalized_with_full_support(random_params, rng):
    for _ in range(20):
        probs = forward_step(random_params, rng.normal(size=24), int(rng.integers(V)), int(rng.integers(64)))
        assert (probs > 0).all() and abs(probs.sum() - 1) <= 1e-9


def test_bias_perturbation_raises_only_that_token(random_params, rng):
    cond = rng.normal(size=24)
    before = forward_step(random_params, cond, BOS, 3)
    bumped = random_params.copy()
    bumped.b2[17] += 0.01
    after = forward_step(bumped, cond, BOS, 3)
    assert after[17] > before[17]
    assert (np.delete(after, 17) < np.delete(before, 17)).all()


def test_forward_step_rejects_out_of_range_position(random_params):
    with pytest.raises(ValueError):
        forward_step(random_params, np.zeros(24), BOS, 64)


def test_logprob_at_zero_params():
    seq = tokenize("speech is good")
    T = len(seq) - 1
    assert math.isclose(sequence_logprob(init_params(0, 0.0), np.zeros(24), seq), -T * math.log(V), rel_tol=1e-13)


def test_logprob_ignores_padding_after_eos(random_params, rng):
    seq = random_seq(rng, 5)
    cond = rng.normal(size=24)
    padded = np.concatenate([seq, [PAD, PAD, 7]])
    assert sequence_logprob(random_params, cond, seq) == sequence_logprob(random_params, cond, padded)


def test_logprob_matches_stepwise_recomputation(random_params, rng):
    for _ in range(5):
        seq = random_seq(rng, int(rng.integers(0, 20)))
        cond = rng.normal(size=24)
        stepwise = sum(math.log(forward_step(random_params, cond, int(seq[t]), t)[seq[t + 1]])
                       for t in range(len(seq) - 1))
        assert sequence_logprob(random_params, cond, seq) == pytest.approx(stepwise, rel=1e-12, abs=1e-12)
        assert sequence_logprob(random_params, cond, seq) <= 0


def test_logprob_grad_finite_differences(rng):
    for trial in range(3):
        p = init_params(100 + trial, 0.3)
        cond = rng.normal(size=24)
        seq = random_seq(rng, 12)
        g = logprob_grad(p, cond, seq)
        for _ in range(50):
            k = int(rng.integers(4))
            arr, garr = p.arrays()[k].reshape(-1), g.arrays()[k].reshape(-1)
            i = int(rng.integers(arr.size))
            fd = central_difference(lambda: sequence_logprob(p, cond, seq), arr, i)
            assert abs(fd - garr[i]) <= 1e-4 * max(abs(fd), abs(garr[i]), 1e-6)


def test_bias_gradient_closed_form_length_two(random_params, rng):
    cond = rng.normal(size=24)
    seq = np.array([BOS, 40, EOS])
    expected = np.zeros(V)
    for t in range(2):
        onehot = np.zeros(V)
        onehot[seq[t + 1]] = 1
        expected += onehot - forward_step(random_params, cond, int(seq[t]), t)
    np.testing.assert_allclose(logprob_grad(random_params, cond, seq).b2, expected, atol=1e-14)


def test_gradient_of_empty_content_is_single_eos_step(random_params, rng):
    cond = rng.normal(size=24)
    g = logprob_grad(random_params, cond, [BOS, EOS])
    expected = -forward_step(random_params, cond, BOS, 0)
    expected[EOS] += 1
    np.testing.assert_allclose(g.b2, expected, atol=1e-15)


# -- sampling ------------------------------------------------------------------

def test_sampled_logprobs_match_teacher_forcing(random_params, rng):
    for i in range(20):
        cond = rng.normal(size=24)
        for temp in (1.0, 0.7, 2.0):
            ro = sample_sequence(random_params, cond, temp, np.random.default_rng([i]))
            assert ro.tokens[0] == BOS and ro.tokens[-1] == EOS and len(ro.tokens) <= 64
            assert ro.sequence_logprob <= 0
            assert abs(ro.sequence_logprob - sequence_logprob(random_params, cond, ro.tokens)) <= 1e-12


def test_sampling_is_reproducible(random_params):
    cond = np.linspace(-1, 1, 24)
    a = sample_sequence(random_params, cond, 1.0, np.random.default_rng(5))
    b = sample_sequence(random_params, cond, 1.0, np.random.default_rng(5))
    np.testing.assert_array_equal(a.tokens, b.tokens)
    np.testing.assert_array_equal(a.step_logprobs, b.step_logprobs)


def test_greedy_below_temperature_threshold(random_params, rng):
    cond = rng.normal(size=24)
    a = sample_sequence(random_params, cond, 1e-7, np.random.default_rng(1))
    b = sample_sequence(random_params, cond, 1e-9, np.random.default_rng(2))
    np.testing.assert_array_equal(a.tokens, b.tokens)
    np.testing.assert_array_equal(a.tokens, greedy_decode(random_params, cond).tokens)
    # each greedy step picks the argmax of the step distribution
    for t in range(len(a.tokens) - 2):
        assert a.tokens[t + 1] == np.argmax(forward_step(random_params, cond, int(a.tokens[t]), t))


def test_forced_eos_at_max_length():
    p = init_params(0, 0.0)
    p.b2[EOS] = -50.0  # EOS essentially never sampled
    ro = sample_sequence(p, np.zeros(24), 1.0, np.random.default_rng(0))
    assert len(ro.tokens) == 64 and ro.tokens[-1] == EOS
    assert ro.step_logprobs[-1] == pytest.approx(sequence_logprob(p, np.zeros(24), ro.tokens) - ro.step_logprobs[:-1].sum())
    assert ro.step_logprobs[-1] < -40


def test_rejects_nonpositive_temperature(random_params):
    with pytest.raises(ValueError):
        sample_sequence(random_params, np.zeros(24), 0.0, np.random.default_rng(0))


def test_uniform_single_step_frequencies():
    # max_len 3: one free step, then the forced EOS
    cfg = PolicyConfig(max_len=3, position_dim=2)
    p = init_params(0, 0.0, cfg)
    n = 100_000
    rng = np.random.default_rng(2024)
    counts = np.zeros(V, dtype=np.int64)
    for _ in range(n):
        counts[sample_sequence(p, np.zeros(24), 1.0, rng).tokens[1]] += 1
    mean = n / V
    sigma = math.sqrt(n * (1 / V) * (1 - 1 / V))
    assert np.all(np.abs(counts - mean) <= 3 * sigma)
    chi2 = float(((counts - mean) ** 2 / mean).sum())
    assert chi2 < 127 + 5 * math.sqrt(2 * 127)


# -- checkpoints -----------------------------------------------------------------

def test_checkpoint_roundtrip_bit_exact(tmp_path, random_params):
    path = tmp_path / "p.ckpt"
    save_params(path, random_params, tag="calibration")
    back, tag = load_params(path, with_tag=True)
    assert tag == "calibration"
    assert back.equals(random_params)
    doc = json.loads(path.read_text())
    assert doc["format_version"] == 1 and set(doc["arrays"]) == {"W1", "b1", "W2", "b2"}


def test_checkpoint_shape_mismatch(tmp_path):
    small = PolicyConfig(hidden_dim=32)
    path = tmp_path / "small.ckpt"
    save_params(path, init_params(0, 0.1, small))
    with pytest.raises(ShapeMismatch):
        load_params(path)


def test_checkpoint_version_mismatch(tmp_path, random_params):
    path = tmp_path / "p.ckpt"
    save_params(path, random_params)
    doc = json.loads(path.read_text())
    doc["format_version"] = 2
    path.write_text(json.dumps(doc))
    with pytest.raises(VersionMismatch):
        load_params(path)


def test_checkpoint_missing_file(tmp_path):
    with pytest.raises(OSError):
        load_params(tmp_path / "missing.ckpt")


# -- optimizer --------------------------------------------------------------------

def test_adam_frozen_columns_stay_bit_identical(random_params, rng):
    p = random_params.copy()
    before = p.W1[:, :24].copy()
    opt = Adam(p, 1e-2, frozen=p.condition_mask())
    for _ in range(25):
        g = p.zeros_like()
        for a in g.arrays():
            a[...] = rng.normal(size=a.shape)
        opt.step(p, g)
    np.testing.assert_array_equal(p.W1[:, :24], before)
    assert not np.array_equal(p.W1[:, 24:], random_params.W1[:, 24:])


def test_adam_first_step_moves_by_learning_rate():
    p = init_params(0, 0.0)
    g = p.zeros_like()
    g.b2[:] = np.linspace(-3, 3, V)
    Adam(p, 0.01).step(p, g)
    moved = p.b2[g.b2 != 0]
    np.testing.assert_allclose(np.abs(moved), 0.01, rtol=1e-6)
    assert (np.sign(p.b2) == -np.sign(g.b2)).all()
