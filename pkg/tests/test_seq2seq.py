"""Tests for the encoder, enhancer, classifier and attention decoder."""

import math
import sys
from pathlib import Path
sys.path.insert(0, str(Path(__file__).parent.parent))

import numpy as np
import pytest
from scipy.special import expit

from src.errors import ConfigError, ContractError
from src.models import EOS, PAD, SOS, ModelParams, ParamGroup
from src.seq2seq import (
    ModelDims, attend, choose_tokens, class_weights, classify, dims_from_params, encode,
    encode_batch, encode_latent, enhance, greedy_decode, init_classifier, init_decoder,
    init_encoder, init_enhancer, lstm_cell_step, pad_batch, teacher_forced, teacher_forcing_arrays,
)
from src.tensor import constant, make_rng

DIMS = ModelDims(vocab_size=9, embed=4, hidden=3, latent=5, n_clusters=2)


def build(seed: int = 0):
    rng = make_rng(seed)
    return (init_encoder(rng, DIMS), init_enhancer(rng, DIMS),
            init_classifier(rng, DIMS.latent, DIMS.n_clusters), init_decoder(rng, 'Q1', DIMS))


def zero_group(group: ParamGroup) -> ParamGroup:
    for tensor in group:
        tensor.data[...] = 0.0
    return group


class TestLstm:

    def test_zero_weights_zero_state(self):
        x = constant(np.ones((1, 2)))
        h = constant(np.zeros((1, 3)))
        c = constant(np.zeros((1, 3)))
        h_new, c_new = lstm_cell_step(x, h, c, constant(np.zeros((2, 12))),
                                      constant(np.zeros((3, 12))), constant(np.zeros(12)))
        assert np.allclose(h_new.data, 0.0)
        assert np.allclose(c_new.data, 0.0)

    def test_matches_gate_formula(self):
        rng = make_rng(1)
        x, h, c = rng.normal(size=(1, 2)), rng.normal(size=(1, 3)), rng.normal(size=(1, 3))
        W_x, W_h, b = rng.normal(size=(2, 12)), rng.normal(size=(3, 12)), rng.normal(size=12)
        h_new, c_new = lstm_cell_step(constant(x), constant(h), constant(c),
                                      constant(W_x), constant(W_h), constant(b))

        z = x @ W_x + h @ W_h + b
        i, f, g, o = expit(z[:, :3]), expit(z[:, 3:6]), np.tanh(z[:, 6:9]), expit(z[:, 9:])
        expected_c = f * c + i * g
        assert np.allclose(c_new.data, expected_c)
        assert np.allclose(h_new.data, o * np.tanh(expected_c))

    def test_forget_bias_initialised_to_one(self):
        R, _, _, Q = build()
        assert np.all(R['b_fw'].data[DIMS.hidden:2 * DIMS.hidden] == 1.0)
        assert np.all(R['b_fw'].data[:DIMS.hidden] == 0.0)
        assert np.all(Q['b'].data[DIMS.latent:2 * DIMS.latent] == 1.0)


class TestEncoder:

    def test_shapes(self):
        R, *_ = build()
        enc = encode([4, 5, 6, 7], R)
        assert enc.step_outputs.shape == (1, 4, 2 * DIMS.hidden)
        assert enc.final_hidden.shape == (1, 2 * DIMS.hidden)

    def test_single_token(self):
        R, *_ = build()
        enc = encode([5], R)
        assert enc.step_outputs.shape == (1, 1, 2 * DIMS.hidden)
        assert np.all(np.isfinite(enc.final_hidden.data))

    def test_empty_sequence(self):
        R, *_ = build()
        with pytest.raises(ContractError):
            encode([], R)
        with pytest.raises(ContractError):
            pad_batch([[4], []])

    def test_padding_does_not_leak(self):
        R, *_ = build()
        alone = encode([4, 5], R).final_hidden.data
        batched = encode_batch([[4, 5], [6, 7, 8, 4]], R).final_hidden.data
        assert np.allclose(alone[0], batched[0], atol=1e-10)

    def test_symmetric_directions(self):
        R, *_ = build()
        for key in ('W_x', 'W_h', 'b'):
            R[f'{key}_bw'].data[...] = R[f'{key}_fw'].data
        seq = [4, 5, 6]
        forward = encode(seq, R).final_hidden.data[0]
        backward = encode(seq[::-1], R).final_hidden.data[0]
        H = DIMS.hidden
        assert np.allclose(forward[:H], backward[H:], atol=1e-12)
        assert np.allclose(forward[H:], backward[:H], atol=1e-12)

    def test_encode_latent_matches_enhance(self):
        R, T, _, _ = build()
        params = ModelParams([R, T])
        points = encode_latent([[4, 5], [6]], params, batch_size=1)
        expected = enhance(encode([6], R).final_hidden, T).data[0]
        assert points.shape == (2, DIMS.latent)
        assert np.allclose(points[1], expected)


class TestEnhancerClassifier:

    def test_enhance_formula(self):
        _, T, _, _ = build()
        h = make_rng(2).normal(size=(2, 2 * DIMS.hidden))
        expected = np.tanh(h @ T['W1'].data + T['b1'].data) @ T['W2'].data + T['b2'].data
        assert np.allclose(enhance(constant(h), T).data, expected)

    def test_probabilities_sum_to_one(self):
        _, _, C, _ = build()
        probs = classify(constant(make_rng(3).normal(size=(6, DIMS.latent))), C).data
        assert np.allclose(probs.sum(axis=1), 1.0)
        assert np.all(probs >= 0)

    def test_single_cluster(self):
        C = init_classifier(make_rng(0), DIMS.latent, 1)
        probs = classify(constant(np.ones((3, DIMS.latent))), C).data
        assert np.allclose(probs, 1.0)

    def test_zero_weights_give_uniform(self):
        C = zero_group(init_classifier(make_rng(0), DIMS.latent, 4))
        probs = classify(constant(np.ones((1, DIMS.latent))), C).data
        assert np.allclose(probs, 0.25)

    def test_no_clusters_rejected(self):
        with pytest.raises(ConfigError):
            init_classifier(make_rng(0), DIMS.latent, 0)

    def test_dims_recovered(self):
        R, T, C, _ = build()
        assert dims_from_params(ModelParams([R, T, C])) == DIMS


class TestAttention:

    def test_single_step_attends_fully(self):
        R, _, _, Q = build()
        enc = encode([4], R)
        context, weights = attend(constant(np.ones((1, DIMS.latent))), enc, Q)
        assert np.allclose(weights.data, 1.0)
        projected = enc.step_outputs.data[0, 0] @ Q['W_att'].data
        assert np.allclose(context.data[0], projected)

    def test_padding_gets_no_weight(self):
        R, _, _, Q = build()
        enc = encode_batch([[4], [5, 6, 7]], R)
        _, weights = attend(constant(np.ones((2, DIMS.latent))), enc, Q)
        assert np.allclose(weights.data.sum(axis=1), 1.0)
        assert np.all(weights.data[0, 1:] < 1e-12)

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_score_loop(self, seed):
        R, _, _, Q = build(seed)
        rng = make_rng(seed + 500)
        sources = [[int(t) for t in rng.integers(4, DIMS.vocab_size, size=rng.integers(1, 6))]
                   for _ in range(3)]
        enc = encode_batch(sources, R)
        hidden = rng.normal(size=(3, DIMS.latent))
        context, weights = attend(constant(hidden), enc, Q)

        steps, W_att = enc.step_outputs.data, Q['W_att'].data
        for b, source in enumerate(sources):
            keys = [steps[b, l] @ W_att for l in range(len(source))]
            scores = [float(np.dot(hidden[b], key)) for key in keys]
            top = max(scores)
            exps = [math.exp(s - top) for s in scores]
            expected_w = [e / sum(exps) for e in exps]
            expected_c = sum(w * key for w, key in zip(expected_w, keys))
            assert np.allclose(weights.data[b, :len(source)], expected_w, rtol=0, atol=1e-12)
            assert np.allclose(weights.data[b, len(source):], 0.0, rtol=0, atol=1e-12)
            assert np.allclose(context.data[b], expected_c, rtol=0, atol=1e-12)

    def test_orthogonal_hidden_gives_uniform_weights(self):
        R, _, _, Q = build()
        enc = encode([4, 5, 6], R)
        keys = enc.step_outputs.data[0] @ Q['W_att'].data
        hidden = np.linalg.svd(keys)[2][-1]
        assert np.allclose(keys @ hidden, 0.0, atol=1e-12)
        _, weights = attend(constant(hidden[None, :]), enc, Q)
        assert np.allclose(weights.data, 1.0 / 3.0, atol=1e-12)


class TestDecoding:

    def test_choose_tokens_masks_reserved(self):
        logits = np.array([[9.0, 8.0, 1.0, 1.0, 0.0]])
        assert choose_tokens(logits).tolist() == [EOS]

    def test_rigged_eos_gives_empty_output(self):
        R, T, _, Q = build()
        Q['W_out'].data[...] = 0.0
        Q['b_out'].data[...] = 0.0
        Q['b_out'].data[EOS] = 10.0
        enc = encode_batch([[4, 5], [6]], R)
        r_e = enhance(enc.final_hidden, T)
        assert greedy_decode(r_e, enc, Q, max_len=5) == [[], []]

    def test_never_emits_eos_respects_max_len(self):
        R, T, _, Q = build()
        Q['W_out'].data[...] = 0.0
        Q['b_out'].data[...] = 0.0
        Q['b_out'].data[7] = 10.0
        enc = encode([4, 5], R)
        r_e = enhance(enc.final_hidden, T)
        assert greedy_decode(r_e, enc, Q, max_len=4) == [[7, 7, 7, 7]]

    @pytest.mark.parametrize("seed", range(100))
    def test_output_length_bounded(self, seed):
        R, T, _, Q = build(seed)
        enc = encode_batch([[4, 5, 6], [7]], R)
        r_e = enhance(enc.final_hidden, T)
        for output in greedy_decode(r_e, enc, Q, max_len=6):
            assert len(output) <= 6
            assert PAD not in output and SOS not in output and EOS not in output

    def test_max_len_zero_rejected(self):
        R, T, _, Q = build()
        enc = encode([4], R)
        with pytest.raises(ContractError):
            greedy_decode(enhance(enc.final_hidden, T), enc, Q, max_len=0)

    def test_teacher_forcing_arrays(self):
        inputs, gold = teacher_forcing_arrays([[4, 5], [6]])
        assert inputs.tolist() == [[SOS, 4, 5], [SOS, 6, PAD]]
        assert gold.tolist() == [[4, 5, EOS], [6, EOS, PAD]]

    def test_class_weights(self):
        w = class_weights(5)
        assert w[PAD] == 0.0 and np.all(w[1:] == 1.0)

    def test_teacher_forced_loss_positive(self):
        R, T, _, Q = build()
        enc = encode_batch([[4, 5], [6]], R)
        forced = teacher_forced(enhance(enc.final_hidden, T), enc, Q, [[4, 5], [6]])
        assert forced.loss.item() > 0
        assert forced.predictions.shape == forced.gold.shape
        assert forced.weights.sum() == 5


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
