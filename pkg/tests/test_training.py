"""Tests for the three training phases and evaluation, at tiny sizes."""

import sys
from pathlib import Path
sys.path.insert(0, str(Path(__file__).parent.parent))

import pytest

from src.checkpoint import load_checkpoint, save_checkpoint
from src.config import PipelineConfig
from src.errors import ContractError, PhaseOrderError
from src.models import Corpus, ModelParams, RoutedBatch
from src.studies import clone_params
from src.synthetic import generate_synthetic_heterogeneous, synthetic_vocabulary
from src.training import (
    enhance_latent, evaluate_model, init_filters, model_dims, route_batch, train_filters,
    train_phase1,
)

VOCAB_SIZE = len(synthetic_vocabulary())


def tiny_config(**changes) -> PipelineConfig:
    values = dict(hidden=4, latent=4, embed=3, dropout=0.0, epochs=2, batch_size=8, lr=0.01,
                  max_steps=12, warmup_steps=6, episode_steps=6, sac_hidden=8, sac_batch=4,
                  buffer_size=64, silhouette_sample=24, log_every=0, seed=3)
    values.update(changes)
    return PipelineConfig(**values)


@pytest.fixture(scope="module")
def corpus() -> Corpus:
    return generate_synthetic_heterogeneous(1, 24, 0.5)


@pytest.fixture(scope="module")
def phase1(corpus):
    return train_phase1(tiny_config(), corpus, VOCAB_SIZE)


@pytest.fixture
def phase2(corpus, phase1):
    params = clone_params(phase1[0])
    enhance_latent(tiny_config(), params, corpus)
    return params


class TestPhase1:

    def test_groups_and_freezing(self, phase1):
        params, history = phase1
        assert params.names() == ['R', 'T', 'C']
        assert params['R'].frozen and params['T'].frozen
        assert not params['C'].frozen
        assert len(history.epoch_losses) == 2

    def test_loss_decreases(self, corpus):
        _, history = train_phase1(tiny_config(epochs=4), corpus, VOCAB_SIZE)
        assert history.epoch_losses[-1] < history.epoch_losses[0]

    def test_deterministic(self, corpus, phase1):
        again, _ = train_phase1(tiny_config(), corpus, VOCAB_SIZE)
        assert again.digests() == phase1[0].digests()

    def test_empty_corpus(self):
        with pytest.raises(ContractError):
            train_phase1(tiny_config(), Corpus('train'), VOCAB_SIZE)

    def test_early_stop(self, corpus):
        _, history = train_phase1(tiny_config(epochs=3, patience=1), corpus, VOCAB_SIZE,
                                  valid=corpus)
        assert len(history.valid_losses) == len(history.epoch_losses)
        if history.stopped_early:
            assert history.valid_losses[-1] > history.valid_losses[-2]


class TestPhase2:

    def test_encoder_untouched(self, corpus, phase1):
        params = clone_params(phase1[0])
        before = params.digests()
        result = enhance_latent(tiny_config(), params, corpus)
        assert params.digests()['R'] == before['R']
        assert params.digests()['T'] == before['T']
        assert result.best_silhouette >= result.initial_silhouette
        assert result.steps <= 12

    def test_requires_frozen_encoder(self, corpus, phase1):
        params = clone_params(phase1[0])
        params['R'].frozen = False
        with pytest.raises(PhaseOrderError):
            enhance_latent(tiny_config(), params, corpus)


class TestPhase3:

    def test_filters_added_and_rest_frozen(self, corpus, phase2):
        before = phase2.digests()
        train_filters(tiny_config(), corpus, phase2)
        assert phase2.filter_names() == ['Q1', 'Q2']
        for name in ('R', 'T', 'C'):
            assert phase2.digests()[name] == before[name]

    def test_routing_is_partition(self, corpus, phase2):
        assert route_batch(corpus, phase2).is_partition_of(len(corpus))

    def test_empty_cluster_keeps_initialisation(self, corpus, phase2):
        config = tiny_config()
        routing = RoutedBatch([list(range(len(corpus))), []])
        train_filters(config, corpus, phase2, routing=routing)
        template = init_filters(config, model_dims(config, VOCAB_SIZE))[0]
        assert phase2['Q2'].digest() == template.digest()
        assert phase2['Q1'].digest() != template.digest()

    def test_filters_are_independent(self, corpus, phase1):
        config = tiny_config()
        first = list(range(0, len(corpus), 2))
        second = list(range(1, len(corpus), 2))

        def q1_after(routing, workers=1):
            params = clone_params(phase1[0])
            train_filters(config.replace(workers=workers), corpus, params, routing=routing)
            return params['Q1'].digest()

        alone = q1_after(RoutedBatch([first, []]))
        assert q1_after(RoutedBatch([first, second])) == alone
        assert q1_after(RoutedBatch([first, second]), workers=2) == alone

    def test_phase_order(self, corpus, phase1):
        params = clone_params(phase1[0])
        params['T'].frozen = False
        with pytest.raises(PhaseOrderError):
            train_filters(tiny_config(), corpus, params)
        without_classifier = ModelParams([params['R'], phase1[0]['T']])
        with pytest.raises(PhaseOrderError):
            train_filters(tiny_config(), corpus, without_classifier)


class TestEvaluate:

    @pytest.fixture
    def trained(self, corpus, phase2):
        train_filters(tiny_config(), corpus, phase2)
        return phase2

    def test_report(self, corpus, trained):
        report = evaluate_model(trained, corpus, max_len=12)
        assert report.n_pairs == len(corpus)
        assert sum(report.cluster_counts) == len(corpus)
        for value in (report.token_accuracy, report.exact_match, report.bleu):
            assert 0.0 <= value <= 1.0

    def test_empty_split(self, trained):
        with pytest.raises(ContractError):
            evaluate_model(trained, Corpus('test'))

    def test_without_filters(self, corpus, phase2):
        with pytest.raises(PhaseOrderError):
            evaluate_model(phase2, corpus)

    def test_checkpoint_round_trip(self, corpus, trained, tmp_path):
        path = str(tmp_path / 'phase3.ckpt')
        save_checkpoint(trained, {'phase': '3'}, path)
        loaded, _ = load_checkpoint(path)
        assert evaluate_model(loaded, corpus, max_len=12) == evaluate_model(trained, corpus, max_len=12)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
