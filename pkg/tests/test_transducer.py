import math

import numpy as np
import pytest

from softlid import numerics as nm
from softlid.numerics import ParamSet, Tensor, grad_check, log_softmax
from softlid.transducer import (
    BLANK_ID,
    FeatureSequence,
    LossLattice,
    ModelConfig,
    TransducerModel,
    greedy_decode,
    transducer_loss,
    transducer_loss_bruteforce,
    utterance_loss,
)

SMALL_CONFIG = ModelConfig(
    feature_dim=4, hidden_dim=6, vocab_size=3, embed_dim=4, chunk_size=2, max_symbols_per_frame=3
)


def random_lattice(rng, num_frames, tokens, vocab_size, requires_grad=False):
    logits = Tensor(
        rng.normal(size=((num_frames * (len(tokens) + 1)), vocab_size + 1)) * 2.0,
        requires_grad=requires_grad,
    )
    return LossLattice(log_softmax(logits), tokens, num_frames), logits


def random_feats(rng, num_frames, dim, language="L1"):
    return FeatureSequence(language, rng.normal(size=(num_frames, dim)))


class TestLossAgainstBruteForce:
    def test_uniform_two_frame_one_token(self):
        # two alignment paths, three uniform factors each: loss = -ln(2/27)
        vocab = 2
        uniform = np.full((2 * 2, vocab + 1), 1.0)
        lattice = LossLattice(log_softmax(Tensor(uniform)), [2], 2)
        loss = transducer_loss(lattice)
        assert loss.data.item() == pytest.approx(-math.log(2.0 / 27.0), abs=1e-12)
        assert transducer_loss_bruteforce(lattice) == pytest.approx(-math.log(2.0 / 27.0), abs=1e-12)

    def test_single_frame_no_tokens_is_blank_logprob(self):
        rng = np.random.default_rng(0)
        lattice, _ = random_lattice(rng, 1, [], 3)
        loss = transducer_loss(lattice)
        assert loss.data.item() == pytest.approx(-lattice.blank_log_probs()[0, 0], abs=1e-12)

    def test_dp_matches_bruteforce_on_200_random_lattices(self):
        rng = np.random.default_rng(42)
        checked = 0
        while checked < 200:
            num_frames = int(rng.integers(1, 5))
            num_tokens = int(rng.integers(0, 4))
            vocab = int(rng.integers(2, 4))
            tokens = [int(t) for t in rng.integers(1, vocab + 1, size=num_tokens)]
            lattice, _ = random_lattice(rng, num_frames, tokens, vocab)
            dp = transducer_loss(lattice).data.item()
            brute = transducer_loss_bruteforce(lattice)
            assert abs(dp - brute) <= 1e-6
            assert dp >= 0.0
            checked += 1

    def test_path_counts(self):
        rng = np.random.default_rng(1)
        counts = {}

        def count_paths(num_frames, tokens):
            lattice, _ = random_lattice(rng, num_frames, tokens, 3)
            # the oracle asserts the binomial path count internally
            transducer_loss_bruteforce(lattice)
            return math.comb(num_frames + len(tokens) - 1, len(tokens))

        assert count_paths(2, [1]) == 2
        assert count_paths(3, [1, 2]) == 6
        assert count_paths(1, []) == 1

    def test_bruteforce_rejects_large_instances(self):
        rng = np.random.default_rng(2)
        lattice, _ = random_lattice(rng, 7, [1], 2)
        with pytest.raises(ValueError, match="too large"):
            transducer_loss_bruteforce(lattice)


class TestLatticeProperties:
    def test_rows_are_normalized(self):
        rng = np.random.default_rng(3)
        lattice, _ = random_lattice(rng, 3, [1, 2], 3)
        sums = np.exp(lattice.log_probs.data).sum(axis=1)
        np.testing.assert_allclose(sums, 1.0, atol=1e-9)

    @pytest.mark.parametrize("seed", range(5))
    def test_alpha_beta_consistency(self, seed):
        # summing alpha+beta over u at any t recovers the total log-likelihood
        rng = np.random.default_rng(seed)
        num_frames = int(rng.integers(2, 5))
        num_tokens = int(rng.integers(1, 4))
        tokens = [int(t) for t in rng.integers(1, 3, size=num_tokens)]
        lattice, _ = random_lattice(rng, num_frames, tokens, 2)
        loss = transducer_loss(lattice).data.item()
        total = -loss
        for t in range(num_frames):
            row = lattice.alpha[t] + lattice.beta[t]
            assert nm.logsumexp(row) == pytest.approx(total, abs=1e-9)
        assert lattice.alpha[0, 0] == 0.0

    @pytest.mark.parametrize("seed", range(4))
    def test_loss_gradient_matches_finite_differences(self, seed):
        rng = np.random.default_rng(100 + seed)
        num_frames = int(rng.integers(2, 5))
        num_tokens = int(rng.integers(1, 4))
        tokens = [int(t) for t in rng.integers(1, 4, size=num_tokens)]
        logits = Tensor(rng.normal(size=(num_frames * (num_tokens + 1), 4)), requires_grad=True)
        params = ParamSet()
        params.add("logits", logits)

        def loss():
            lattice = LossLattice(log_softmax(logits), tokens, num_frames)
            return transducer_loss(lattice)

        assert grad_check(loss, params, eps=1e-6, samples_per_tensor=25, seed=seed) <= 1e-4

    def test_nan_lattice_rejected(self):
        bad = Tensor(np.full((2, 3), np.nan))
        lattice = LossLattice.__new__(LossLattice)
        lattice.log_probs = bad
        lattice.tokens = []
        lattice.num_frames = 2
        lattice.alpha = lattice.beta = None
        with pytest.raises(nm.NumericsError, match="NaN"):
            transducer_loss(lattice)


class TestEncoder:
    def test_single_frame_shape(self):
        model = TransducerModel.init(SMALL_CONFIG, seed=0)
        out = model.encode(random_feats(np.random.default_rng(0), 1, 4))
        assert out.data.shape == (1, 6)
        assert np.all(np.isfinite(out.data))

    def test_chunk_causality(self):
        # changing frames in chunk 2 leaves chunk-1 outputs bit-identical
        model = TransducerModel.init(SMALL_CONFIG, seed=1)
        rng = np.random.default_rng(5)
        frames = rng.normal(size=(6, 4))
        base = model.encode(FeatureSequence("L1", frames)).data
        perturbed = frames.copy()
        perturbed[2:] += rng.normal(size=(4, 4))
        changed = model.encode(FeatureSequence("L1", perturbed)).data
        chunk = SMALL_CONFIG.chunk_size
        assert np.array_equal(base[:chunk], changed[:chunk])
        assert not np.array_equal(base[chunk:], changed[chunk:])

    def test_large_chunk_equals_offline_mode(self):
        rng = np.random.default_rng(6)
        frames = rng.normal(size=(5, 4))
        arrays = TransducerModel.init(SMALL_CONFIG, seed=2).parameter_arrays()

        def encode_with_chunk(chunk_size):
            config = ModelConfig(4, 6, 3, 4, chunk_size, 3)
            model = TransducerModel.from_arrays(config, arrays)
            return model.encode(FeatureSequence("L1", frames)).data

        exact = encode_with_chunk(5)
        for chunk_size in (7, 100):
            assert np.array_equal(encode_with_chunk(chunk_size), exact)

    def test_dimension_mismatch_rejected(self):
        model = TransducerModel.init(SMALL_CONFIG, seed=0)
        with pytest.raises(ValueError, match="feature dim"):
            model.encode(random_feats(np.random.default_rng(0), 3, 5))


class TestPredictor:
    def test_empty_prefix_single_state(self):
        model = TransducerModel.init(SMALL_CONFIG, seed=3)
        out = model.predict([])
        assert out.data.shape == (1, 6)

    def test_shared_prefix_shares_states(self):
        model = TransducerModel.init(SMALL_CONFIG, seed=3)
        a = model.predict([1, 2, 3]).data
        b = model.predict([1, 2, 1]).data
        np.testing.assert_array_equal(a[:3], b[:3])
        assert not np.array_equal(a[3], b[3])

    def test_state_count(self):
        model = TransducerModel.init(SMALL_CONFIG, seed=3)
        assert model.predict([1, 2, 3]).data.shape == (4, 6)

    def test_out_of_range_token_rejected(self):
        model = TransducerModel.init(SMALL_CONFIG, seed=3)
        with pytest.raises(ValueError, match="out of range"):
            model.predict([0])
        with pytest.raises(ValueError, match="out of range"):
            model.predict([4])


class TestJoint:
    def test_output_length_and_determinism(self):
        model = TransducerModel.init(SMALL_CONFIG, seed=4)
        rng = np.random.default_rng(7)
        f = Tensor(rng.normal(size=(1, 6)))
        g = Tensor(rng.normal(size=(1, 6)))
        first = model.joint(f, g).data
        second = model.joint(f, g).data
        assert first.shape == (1, 4)
        assert np.array_equal(first, second)

    def test_zeroed_projection_gives_uniform_distribution(self):
        model = TransducerModel.init(SMALL_CONFIG, seed=4)
        model.params["joint.out_w"].data[:] = 0.0
        model.params["joint.out_b"].data[:] = 0.0
        rng = np.random.default_rng(8)
        logits = model.joint(Tensor(rng.normal(size=(1, 6))), Tensor(rng.normal(size=(1, 6))))
        assert np.array_equal(logits.data, np.zeros((1, 4)))
        probs = np.exp(log_softmax(logits).data)
        np.testing.assert_allclose(probs, 0.25, atol=1e-12)


class TestFullModelGradients:
    def test_full_transducer_loss_gradcheck(self):
        config = ModelConfig(feature_dim=3, hidden_dim=4, vocab_size=3, embed_dim=3, chunk_size=2)
        model = TransducerModel.init(config, seed=9)
        rng = np.random.default_rng(9)
        feats = random_feats(rng, 3, 3)
        tokens = [1, 3]

        err = grad_check(
            lambda: utterance_loss(model, feats, tokens),
            model.params,
            eps=1e-6,
            samples_per_tensor=10,
            seed=0,
        )
        assert err <= 1e-4


def rigged_decoder_model():
    """Hand-built joint: emits token 2 from the BOS state, blank afterwards."""
    config = ModelConfig(feature_dim=2, hidden_dim=3, vocab_size=2, embed_dim=3, chunk_size=4)
    arrays = {name: np.zeros(shape) for name, shape in {
        "enc.in_w": (3, 2), "enc.in_b": (3,), "enc.hid_w": (3, 3), "enc.hid_b": (3,),
        "enc.ctx_w": (3, 2), "enc.ctx_b": (3,),
        "pred.embed": (3, 3), "pred.in_w": (3, 3), "pred.rec_w": (3, 3), "pred.b": (3,),
        "joint.enc_w": (3, 3), "joint.enc_b": (3,),
        "joint.pred_w": (3, 3), "joint.pred_b": (3,),
        "joint.out_w": (3, 3), "joint.out_b": (3,),
    }.items()}
    arrays["pred.embed"][2, 0] = 10.0  # token-2 embedding drives the first hidden unit
    arrays["pred.in_w"] = np.eye(3)
    arrays["joint.pred_w"] = np.eye(3)
    arrays["joint.out_w"][BLANK_ID, 0] = 10.0  # after emitting 2, blank wins
    arrays["joint.out_b"][2] = 1.0  # from the BOS state, token 2 wins
    return TransducerModel.from_arrays(config, arrays)


class TestGreedyDecode:
    def test_always_blank_gives_empty_output(self):
        model = TransducerModel.init(SMALL_CONFIG, seed=5)
        model.params["joint.out_w"].data[:] = 0.0
        model.params["joint.out_b"].data[:] = 0.0
        model.params["joint.out_b"].data[BLANK_ID] = 5.0
        feats = random_feats(np.random.default_rng(10), 6, 4)
        assert greedy_decode(model, feats) == []

    def test_rigged_joint_emits_single_token(self):
        model = rigged_decoder_model()
        feats = FeatureSequence("L1", np.zeros((1, 2)))
        assert greedy_decode(model, feats) == [2]

    def test_cap_one_bounds_output_by_frames(self):
        model = TransducerModel.init(SMALL_CONFIG, seed=6)
        # bias every logit toward token 1 so the cap is what stops emission
        model.params["joint.out_b"].data[1] = 10.0
        feats = random_feats(np.random.default_rng(11), 5, 4)
        out = greedy_decode(model, feats, max_symbols_per_frame=1)
        assert len(out) <= 5
        assert BLANK_ID not in out

    def test_output_never_exceeds_frames_times_cap(self):
        model = TransducerModel.init(SMALL_CONFIG, seed=7)
        model.params["joint.out_b"].data[2] = 10.0
        feats = random_feats(np.random.default_rng(12), 4, 4)
        for cap in (1, 2, 3):
            assert len(greedy_decode(model, feats, max_symbols_per_frame=cap)) <= 4 * cap

    def test_decode_contains_no_blank_and_is_deterministic(self):
        model = TransducerModel.init(SMALL_CONFIG, seed=8)
        feats = random_feats(np.random.default_rng(13), 8, 4)
        first = greedy_decode(model, feats)
        second = greedy_decode(model, feats)
        assert first == second
        assert all(1 <= t <= 3 for t in first)
