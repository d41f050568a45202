import math

import numpy as np
import pytest

from gradcheck import dense, fd_gradient, random_policy, random_seq, rel_error, touched_rows
from thinkgrpo.errors import CheckpointError, ConfigError
from thinkgrpo.policy import (
    PolicyParams,
    TokenSeq,
    checkpoint_bytes,
    load_checkpoint,
    logprob_gradient,
    next_token_distribution,
    sample_sequence,
    save_checkpoint,
    sequence_logprob,
    token_logprobs,
)
from thinkgrpo.vocab import Vocabulary


def test_zero_theta_is_uniform():
    p = PolicyParams.zeros(7, n_contexts=32)
    np.testing.assert_allclose(next_token_distribution(p, [1, 2, 3]), np.full(7, 1 / 7), atol=1e-15)


def test_large_logit_concentrates_mass():
    p = PolicyParams.zeros(5, n_contexts=1, k=1, backoff=False)
    p.theta[0, 0] = 50.0
    assert next_token_distribution(p, [3])[0] > 1 - 1e-8


def test_distribution_sums_to_one():
    rng = np.random.default_rng(0)
    for _ in range(50):
        p = random_policy(rng)
        p.theta *= 30
        dist = next_token_distribution(p, list(rng.integers(p.n_tokens, size=4)))
        assert abs(dist.sum() - 1.0) <= 1e-12


def test_greedy_and_seeded_sampling_are_deterministic():
    p = random_policy(np.random.default_rng(1), n_tokens=6)
    a = sample_sequence(p, (1, 2), temperature=0.0, max_len=8)
    b = sample_sequence(p, (1, 2), temperature=0.0, max_len=8, rng_seed=99)
    assert a == b
    assert sample_sequence(p, (1,), 1.0, 8, 5) == sample_sequence(p, (1,), 1.0, 8, 5)


def test_sampling_matches_distribution_within_three_sigma():
    probs = np.array([0.1, 0.2, 0.3, 0.4])
    p = PolicyParams.zeros(4, n_contexts=1, k=1, backoff=False)
    p.theta[0] = np.log(probs)
    rng = np.random.default_rng(123)
    n = 100_000
    counts = np.zeros(4)
    for _ in range(n):
        seq, _ = sample_sequence(p, (), 1.0, 1, rng)
        counts[seq.tokens[0]] += 1
    sigma = np.sqrt(n * probs * (1 - probs))
    assert np.all(np.abs(counts - n * probs) < 3 * sigma)


def test_stop_and_eos_terminate():
    p = PolicyParams.zeros(4, n_contexts=8, eos_id=3)
    p.theta[:, 2] = 40.0
    seq, _ = sample_sequence(p, (), 0.0, 10, stop_ids={2})
    assert seq == TokenSeq((2,), terminated=True)
    p.theta[:, 2] = 0.0
    p.theta[:, 3] = 40.0
    seq, _ = sample_sequence(p, (), 0.0, 10)
    assert seq.terminated and seq.tokens == (3,)


def test_truncation_at_max_len():
    p = PolicyParams.zeros(4, n_contexts=8, eos_id=3)
    p.theta[:, 0] = 40.0
    seq, _ = sample_sequence(p, (), 0.0, 5)
    assert len(seq) == 5 and seq.truncated


def test_sampling_rejects_bad_arguments():
    p = PolicyParams.zeros(4, n_contexts=8)
    with pytest.raises(ConfigError):
        sample_sequence(p, (), 1.0, 0)
    with pytest.raises(ConfigError):
        sample_sequence(p, (), -1.0, 3)


def test_sampled_logprob_is_policy_measure():
    p = random_policy(np.random.default_rng(2), n_tokens=5)
    seq, lp = sample_sequence(p, (0,), temperature=0.5, max_len=6, rng_seed=3)
    assert lp == pytest.approx(sequence_logprob(p, (0,), seq), abs=1e-12)


def test_logprob_examples():
    p = PolicyParams.zeros(4, n_contexts=8)
    assert sequence_logprob(p, (1,), ()) == 0
    assert sequence_logprob(p, (1,), (2,)) == pytest.approx(math.log(1 / 4), abs=1e-15)


def test_logprob_chain_rule():
    rng = np.random.default_rng(4)
    for _ in range(100):
        p = random_policy(rng)
        prompt = random_seq(rng, p.n_tokens, 3, 0)
        seq = random_seq(rng, p.n_tokens, 6)
        cut = int(rng.integers(0, len(seq) + 1))
        a, b = seq[:cut], seq[cut:]
        whole = sequence_logprob(p, prompt, seq)
        assert whole == pytest.approx(sequence_logprob(p, prompt, a) + sequence_logprob(p, prompt + a, b), abs=1e-12)


def test_single_step_gradient_is_onehot_minus_softmax():
    p = PolicyParams.zeros(4, n_contexts=8, k=1, backoff=False)
    grad = logprob_gradient(p, (1,), (2,))
    (row,) = grad
    np.testing.assert_allclose(grad[row], [-0.25, -0.25, 0.75, -0.25], atol=1e-15)


def test_gradient_rows_sum_to_zero():
    rng = np.random.default_rng(5)
    for _ in range(50):
        p = random_policy(rng)
        for g in logprob_gradient(p, (), random_seq(rng, p.n_tokens)).values():
            assert abs(g.sum()) <= 1e-12


def test_logprob_gradient_matches_finite_differences():
    rng = np.random.default_rng(6)
    for _ in range(30):
        p = random_policy(rng)
        prompt = random_seq(rng, p.n_tokens, 3, 0)
        seq = random_seq(rng, p.n_tokens)
        num = fd_gradient(lambda q: sequence_logprob(q, prompt, seq), p, touched_rows(p, prompt, [seq]))
        ana = dense(logprob_gradient(p, prompt, seq), p.theta.shape)
        assert rel_error(ana, num) < 1e-6


def test_token_logprobs_sum_to_sequence_logprob():
    p = random_policy(np.random.default_rng(7))
    seq = (0, 1, 0)
    assert token_logprobs(p, (), seq).sum() == pytest.approx(sequence_logprob(p, (), seq))


def test_checkpoint_roundtrip(tmp_path):
    vocab = Vocabulary.default()
    p = PolicyParams.for_vocab(vocab, n_contexts=64)
    p.theta[:] = np.random.default_rng(8).normal(size=p.theta.shape)
    p.meta = {"stage": 1, "step": 12}
    path = tmp_path / "p.ckpt"
    save_checkpoint(path, p)
    q = load_checkpoint(path, expected_digest=vocab.digest)
    assert np.array_equal(q.theta, p.theta)
    assert (q.k, q.eos_id, q.backoff, q.vocab_digest, q.meta) == (p.k, p.eos_id, p.backoff, p.vocab_digest, p.meta)
    assert checkpoint_bytes(q) == path.read_bytes()


def test_checkpoint_rejects_mismatch_and_corruption(tmp_path):
    vocab = Vocabulary.default()
    p = PolicyParams.for_vocab(vocab, n_contexts=16)
    path = tmp_path / "p.ckpt"
    save_checkpoint(path, p)
    with pytest.raises(CheckpointError, match="vocabulary"):
        load_checkpoint(path, expected_digest="0" * 64)
    data = bytearray(path.read_bytes())
    data[40] ^= 0xFF
    path.write_bytes(bytes(data))
    with pytest.raises(CheckpointError, match="checksum"):
        load_checkpoint(path)
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_params_validation():
    with pytest.raises(ConfigError):
        PolicyParams(np.zeros(3))
    with pytest.raises(ConfigError):
        PolicyParams(np.full((2, 2), np.nan))
    with pytest.raises(ConfigError):
        PolicyParams(np.zeros((2, 2)), k=0)
