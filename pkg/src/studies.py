"""
Experiment harnesses built on the phase functions.

    correlation_study   RL budget sweep: achieved S_c against validation token accuracy
    filter_comparison   1-filter encoder-decoder baseline against the n-filter model
    cluster_sweep       enhancement with 2, 3 and 4 clusters over one latent sample
    blob_trials         enhancement on two synthetic Gaussian blobs
"""

import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .clustering import cluster_report
from .config import PipelineConfig
from .metrics import export_table, spearman
from .models import Corpus, ModelParams, Vocabulary
from .pipeline import ensure_data, load_data
from .sac import ClusterEnv, SacAgent, enhance_classifier
from .seq2seq import init_classifier
from .synthetic import two_blobs
from .tensor import make_rng
from .training import enhance_latent, evaluate_model, latent_sample, train_filters, train_phase1
from .utils import phase_seed

logger = logging.getLogger(__name__)


def clone_params(params: ModelParams) -> ModelParams:
    return ModelParams(group.clone() for group in params)


def with_classifier(config: PipelineConfig, params: ModelParams, n_clusters: int) -> ModelParams:
    """Copy of params whose classifier is a fresh n-cluster initialisation."""
    latent = params['T']['W2'].shape[1]
    copy = clone_params(params)
    copy.add(init_classifier(make_rng(phase_seed(config.seed, 'classifier_init')),
                             latent, n_clusters, config.dtype))
    return copy


def _prepare(config: PipelineConfig) -> Tuple[Dict[str, Corpus], Vocabulary]:
    ensure_data(config)
    return load_data(config)


def _study_path(config: PipelineConfig, kind: str) -> str:
    return str(Path(config.out_dir) / f'study_{kind}.csv')


def _finish(config: PipelineConfig, params: ModelParams, corpora: Dict[str, Corpus],
            split: str, points: np.ndarray):
    result = enhance_latent(config, params, corpora['train'], points=points)
    train_filters(config, corpora['train'], params, valid=corpora.get('valid'))
    report = evaluate_model(params, corpora[split], config.decode_max_len)
    return result, report


def correlation_study(config: PipelineConfig, budgets: Optional[Sequence[int]] = None,
                      split: str = 'valid') -> Tuple[pd.DataFrame, float]:
    budgets = list(budgets) if budgets is not None else config.budget_list
    corpora, vocab = _prepare(config)
    base, _ = train_phase1(config, corpora['train'], len(vocab), corpora.get('valid'))
    points, _ = latent_sample(config, base, corpora['train'])

    rows = []
    for budget in budgets:
        budget_config = config.replace(max_steps=budget)
        result, report = _finish(budget_config, clone_params(base), corpora, split, points)
        rows.append({
            'budget': budget,
            'best_silhouette': result.best_silhouette,
            'token_accuracy': report.token_accuracy,
            'bleu': report.bleu,
            'non_empty': sum(1 for c in report.cluster_counts if c),
        })
        logger.info(f"budget {budget}: S_c={result.best_silhouette:.4f}  "
                    f"token_acc={report.token_accuracy:.4f}")
    frame = export_table(rows, _study_path(config, 'correlation'))
    rho = spearman(frame['best_silhouette'], frame['token_accuracy'])
    logger.info(f"Spearman rank correlation S_c vs token accuracy: {rho:.4f}")
    return frame, rho


def filter_comparison(config: PipelineConfig, seeds: Optional[Iterable[int]] = None,
                      split: Optional[str] = None) -> Tuple[pd.DataFrame, float]:
    """Per seed: phase 1 once, then the baseline (1 filter, no RL) and the configured model."""
    corpora, vocab = _prepare(config)
    split = split or config.eval_split
    seeds = list(seeds) if seeds is not None else [config.seed + i for i in range(config.study_seeds)]
    variants = [('baseline', 1, 0), ('lms2s', config.n_filters, config.max_steps)]

    rows = []
    for seed in seeds:
        seed_config = config.replace(seed=seed)
        base, _ = train_phase1(seed_config, corpora['train'], len(vocab), corpora.get('valid'))
        points, _ = latent_sample(seed_config, base, corpora['train'])
        for variant, n_filters, max_steps in variants:
            variant_config = seed_config.replace(n_filters=n_filters, max_steps=max_steps)
            params = with_classifier(variant_config, base, n_filters)
            result, report = _finish(variant_config, params, corpora, split, points)
            rows.append({
                'seed': seed,
                'variant': variant,
                'n_filters': n_filters,
                'token_accuracy': report.token_accuracy,
                'exact_match': report.exact_match,
                'bleu': report.bleu,
                'best_silhouette': result.best_silhouette,
                'non_empty': sum(1 for c in report.cluster_counts if c),
            })
    frame = export_table(rows, _study_path(config, 'filters'))
    means = frame.groupby('variant')['token_accuracy'].mean()
    gain = float(means['lms2s'] - means['baseline'])
    logger.info(f"mean token accuracy: baseline {means['baseline']:.4f}, "
                f"{config.n_filters} filters {means['lms2s']:.4f} (gain {gain:+.4f})")
    return frame, gain


def cluster_sweep(config: PipelineConfig, cluster_counts: Sequence[int] = (2, 3, 4)) -> pd.DataFrame:
    corpora, vocab = _prepare(config)
    base, _ = train_phase1(config, corpora['train'], len(vocab), corpora.get('valid'))
    points, rows_used = latent_sample(config, base, corpora['train'])
    tags = corpora['train'].subset(rows_used).tags()

    rows = []
    for n in cluster_counts:
        params = with_classifier(config, base, n)
        result = enhance_latent(config, params, corpora['train'], points=points)
        frame = cluster_report(points, result.best_assignments, n, tags if any(tags) else None)
        frame.to_csv(str(Path(config.out_dir) / f'cluster_report_n{n}.csv'), index=False)
        rows.append({
            'n_clusters': n,
            'initial_silhouette': result.initial_silhouette,
            'best_silhouette': result.best_silhouette,
            'non_empty': int(np.count_nonzero(np.bincount(result.best_assignments, minlength=n))),
            'steps': result.steps,
        })
    return export_table(rows, _study_path(config, 'clusters'))


def blob_trials(config: PipelineConfig, seeds: Iterable[int] = range(5), n_clusters: int = 2,
                n_points: int = 256, dim: int = 4, separation: float = 10.0,
                out_path: Optional[str] = None) -> pd.DataFrame:
    rows: List[Dict] = []
    for seed in seeds:
        points, _ = two_blobs(make_rng(phase_seed(seed, 'data_train')), n_points, dim, separation)
        classifier = init_classifier(make_rng(phase_seed(seed, 'classifier_init')), dim, n_clusters)
        env = ClusterEnv(points, classifier, k=config.k, b=config.b, target=config.target,
                         episode_steps=config.episode_steps, action_low=config.action_low,
                         action_high=config.action_high)
        agent = SacAgent(env.observation_dim, env.action_dim, make_rng(phase_seed(seed, 'rl')),
                         hidden=config.sac_hidden, lr=config.sac_lr, batch_size=config.sac_batch,
                         buffer_size=config.buffer_size, gamma=config.gamma, tau=config.tau)
        result = enhance_classifier(env, agent, max_steps=config.max_steps,
                                    warmup_steps=config.warmup_steps,
                                    reward_scale=config.reward_scale, log_every=config.log_every)
        sizes = np.bincount(result.best_assignments, minlength=n_clusters)
        rows.append({
            'seed': seed,
            'n_clusters': n_clusters,
            'initial_silhouette': result.initial_silhouette,
            'best_silhouette': result.best_silhouette,
            'reached_target': result.reached_target,
            'steps': result.steps,
            'non_empty': int(np.count_nonzero(sizes)),
        })
        logger.info(f"blob trial seed {seed}: best S_c {result.best_silhouette:.4f} "
                    f"in {result.steps} steps, {rows[-1]['non_empty']} non-empty cluster(s)")
    return export_table(rows, out_path or _study_path(config, 'blobs'))


STUDIES = {
    'correlation': lambda config: correlation_study(config)[0],
    'filters': lambda config: filter_comparison(config)[0],
    'clusters': cluster_sweep,
    'blobs': lambda config: pd.concat([blob_trials(config, n_clusters=2),
                                       blob_trials(config, n_clusters=4,
                                                   out_path=_study_path(config, 'blobs_n4'))],
                                      ignore_index=True),
}
