"""Finite-difference checks of the network pieces at tiny sizes."""

import sys
from pathlib import Path
sys.path.insert(0, str(Path(__file__).parent.parent))

import numpy as np
import pytest

from src.errors import ContractError
from src.gradcheck import grad_check
from src.models import ParamGroup
from src.seq2seq import (
    ModelDims, attend, classify, decode_step, encode_batch, enhance, init_classifier,
    init_decoder, init_decoder_state, init_encoder, init_enhancer, lstm_cell_step, teacher_forced,
)
from src.tensor import add, constant, make_rng, matmul, reduce_sum, square, tanh

DIMS = ModelDims(vocab_size=7, embed=3, hidden=3, latent=4, n_clusters=2)
SEEDS = range(50)


def build_groups(seed: int):
    rng = make_rng(seed)
    return {
        'R': init_encoder(rng, DIMS),
        'T': init_enhancer(rng, DIMS),
        'C': init_classifier(rng, DIMS.latent, DIMS.n_clusters),
        'Q': init_decoder(rng, 'Q1', DIMS),
    }


def random_batch(seed: int):
    rng = make_rng(seed + 1000)
    sources = [rng.integers(3, DIMS.vocab_size, size=rng.integers(1, 4)).tolist() for _ in range(2)]
    targets = [rng.integers(3, DIMS.vocab_size, size=rng.integers(1, 3)).tolist() for _ in range(2)]
    return sources, targets


class TestLinear:

    @pytest.mark.parametrize("seed", SEEDS)
    def test_linear_layer(self, seed):
        rng = make_rng(seed)
        layer = ParamGroup('L')
        layer.add('W', rng.normal(size=(4, 3)))
        layer.add('b', rng.normal(size=3))
        x = constant(rng.normal(size=(5, 4)))

        report = grad_check(lambda: reduce_sum(square(add(matmul(x, layer['W']), layer['b']))), [layer])
        assert report.passed
        assert report.max_error < 1e-7

    def test_frozen_group_excluded(self):
        rng = make_rng(1)
        trained, frozen = ParamGroup('A'), ParamGroup('B')
        trained.add('W', rng.normal(size=(2, 2)))
        frozen.add('W', rng.normal(size=(2, 2)))
        frozen.freeze()
        x = constant(rng.normal(size=(3, 2)))

        report = grad_check(lambda: reduce_sum(tanh(matmul(matmul(x, trained['W']), frozen['W']))),
                            [trained, frozen])
        assert list(report.errors) == ['A']
        assert report.passed

    def test_needs_float64(self):
        group = ParamGroup('A')
        group.add('W', np.ones((2, 2), dtype=np.float32))
        with pytest.raises(ContractError):
            grad_check(lambda: reduce_sum(group['W']), [group])


class TestNetworkGradients:

    @pytest.mark.parametrize("seed", SEEDS)
    def test_lstm_cell(self, seed):
        rng = make_rng(seed)
        cell = ParamGroup('cell')
        cell.add('W_x', rng.normal(size=(3, 8)) * 0.5)
        cell.add('W_h', rng.normal(size=(2, 8)) * 0.5)
        cell.add('b', rng.normal(size=8) * 0.1)
        x = constant(rng.normal(size=(2, 3)))
        h = constant(rng.normal(size=(2, 2)))
        c = constant(rng.normal(size=(2, 2)))

        def f():
            h_new, c_new = lstm_cell_step(x, h, c, cell['W_x'], cell['W_h'], cell['b'])
            return reduce_sum(add(square(h_new), c_new))

        report = grad_check(f, [cell])
        assert report.passed, report.errors

    @pytest.mark.parametrize("seed", SEEDS)
    def test_encoder_and_enhancer(self, seed):
        groups = build_groups(seed)
        sources, _ = random_batch(seed)

        def f():
            enc = encode_batch(sources, groups['R'])
            return reduce_sum(square(enhance(enc.final_hidden, groups['T'])))

        report = grad_check(f, [groups['R'], groups['T']])
        assert report.passed, report.errors

    @pytest.mark.parametrize("seed", SEEDS)
    def test_classifier(self, seed):
        groups = build_groups(seed)
        rng = make_rng(seed + 2000)
        r_e = constant(rng.normal(size=(4, DIMS.latent)))
        weights = constant(rng.normal(size=(4, DIMS.n_clusters)))
        report = grad_check(lambda: reduce_sum(classify(r_e, groups['C']) * weights), [groups['C']])
        assert report.passed, report.errors

    @pytest.mark.parametrize("seed", SEEDS)
    def test_attention(self, seed):
        groups = build_groups(seed)
        sources, _ = random_batch(seed)
        enc = encode_batch(sources, groups['R'])
        hidden = constant(make_rng(seed + 3000).normal(size=(2, DIMS.latent)))

        def f():
            context, _ = attend(hidden, enc, groups['Q'])
            return reduce_sum(square(context))

        report = grad_check(f, [groups['Q']])
        assert report.passed, report.errors

    @pytest.mark.parametrize("seed", SEEDS)
    def test_decode_step(self, seed):
        groups = build_groups(seed)
        sources, _ = random_batch(seed)

        def f():
            enc = encode_batch(sources, groups['R'])
            r_e = enhance(enc.final_hidden, groups['T'])
            logits, _ = decode_step(init_decoder_state(r_e, enc, groups['Q']), groups['Q'])
            return reduce_sum(square(logits))

        report = grad_check(f, [groups['R'], groups['T'], groups['Q']])
        assert report.passed, report.errors

    @pytest.mark.parametrize("seed", SEEDS)
    def test_teacher_forced_loss(self, seed):
        groups = build_groups(seed)
        sources, targets = random_batch(seed)

        def f():
            enc = encode_batch(sources, groups['R'])
            r_e = enhance(enc.final_hidden, groups['T'])
            return teacher_forced(r_e, enc, groups['Q'], targets).loss

        report = grad_check(f, [groups['R'], groups['T'], groups['Q']])
        assert report.passed, report.errors


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
