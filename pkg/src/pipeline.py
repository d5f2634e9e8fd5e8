"""
Checkpoint-driven phase runners behind the CLI commands.

Every runner reads what earlier phases wrote under out_dir and writes its
own outputs there:

    gen-data        data/{train,valid,test}.tsv
    train           phase1.ckpt, history.json
    enhance         phase2.ckpt, trajectory.csv
    train-filters   phase3.ckpt, history.json
    evaluate        metrics.txt
    cluster-report  cluster_report.csv
    pipeline        all of the above, in order
"""

import logging
from pathlib import Path
from typing import Dict, Optional, Tuple

from .checkpoint import load_checkpoint, save_checkpoint
from .clustering import cluster_composition, cluster_report, print_cluster_summary
from .config import PipelineConfig, config_echo, config_from_echo, echo_lines
from .errors import ContractError, PhaseOrderError
from .loader import SPLITS, load_splits, write_pairs
from .metrics import export_report, export_table, print_metrics_summary
from .models import Corpus, EvalReport, ModelParams, Vocabulary
from .seq2seq import dims_from_params
from .synthetic import generate_text_pairs
from .training import (
    enhance_latent, evaluate_model, latent_sample, route_assignments, train_filters, train_phase1,
)
from .utils import export_to_json, load_from_json, phase_seed, write_lines

logger = logging.getLogger(__name__)

PHASE_COMMANDS = {1: 'train', 2: 'enhance', 3: 'train-filters'}
DIMENSION_KEYS = ('hidden', 'latent', 'embed', 'n_filters', 'precision')


def _out(config: PipelineConfig, name: str) -> str:
    return str(Path(config.out_dir) / name)


def checkpoint_path(config: PipelineConfig, phase: int) -> str:
    return _out(config, f'phase{phase}.ckpt')


def write_config_echo(config: PipelineConfig):
    lines = echo_lines(config)
    for line in lines:
        print(line)
    write_lines(lines, _out(config, 'config.txt'))


def save_phase(config: PipelineConfig, params: ModelParams, phase: int):
    echo = config_echo(config)
    echo['phase'] = str(phase)
    save_checkpoint(params, echo, checkpoint_path(config, phase))


def load_phase(config: PipelineConfig, phase: int, vocab: Vocabulary) -> ModelParams:
    """
    Load phaseN.ckpt. A missing file names the earliest phase that still has
    to run; dimensions that disagree with the configuration are reported
    key by key.
    """
    for earlier in range(1, phase + 1):
        if not Path(checkpoint_path(config, earlier)).is_file():
            raise PhaseOrderError(f"no checkpoint {checkpoint_path(config, earlier)}: "
                                  f"run `{PHASE_COMMANDS[earlier]}` first")
    params, echo = load_checkpoint(checkpoint_path(config, phase))
    saved = config_from_echo(echo)
    mismatches = [f"{key} {getattr(saved, key)} != {getattr(config, key)}"
                  for key in DIMENSION_KEYS if getattr(saved, key) != getattr(config, key)]
    vocab_size = dims_from_params(params).vocab_size
    if vocab_size != len(vocab):
        mismatches.append(f"vocabulary {vocab_size} != {len(vocab)}")
    if mismatches:
        raise ContractError(f"{checkpoint_path(config, phase)} does not match the configuration: "
                            + '; '.join(mismatches))
    return params


# ── data ───────────────────────────────────────────────────────────────────

def run_gen_data(config: PipelineConfig):
    sizes = {'train': config.train_size, 'valid': config.valid_size, 'test': config.test_size}
    for split in SPLITS:
        if sizes[split] < 2:
            continue
        pairs = generate_text_pairs(phase_seed(config.seed, f'data_{split}'), sizes[split],
                                    config.mix, config.bias)
        path = config.data_path / f'{split}.tsv'
        if path.is_file():
            logger.warning(f"overwriting existing corpus file {path}")
        write_pairs(pairs, str(path))
        logger.info(f"wrote {len(pairs)} synthetic pairs to {path}")


def ensure_data(config: PipelineConfig):
    """Generate the synthetic corpus only when no training file exists yet."""
    if not (config.data_path / 'train.tsv').is_file():
        run_gen_data(config)


def load_data(config: PipelineConfig) -> Tuple[Dict[str, Corpus], Vocabulary]:
    if not (config.data_path / 'train.tsv').is_file():
        raise PhaseOrderError(f"no corpus in {config.data_path}: run `gen-data` first")
    return load_splits(str(config.data_path), config.max_seq_len)


# ── phases ─────────────────────────────────────────────────────────────────

def _update_history(config: PipelineConfig, entries: Dict):
    path = _out(config, 'history.json')
    history = load_from_json(path) if Path(path).is_file() else {}
    history.update(entries)
    export_to_json(history, path)


def run_train(config: PipelineConfig) -> ModelParams:
    corpora, vocab = load_data(config)
    params, history = train_phase1(config, corpora['train'], len(vocab), corpora.get('valid'))
    save_phase(config, params, 1)
    _update_history(config, {'phase1': history.as_dict()})
    return params


def run_enhance(config: PipelineConfig):
    corpora, vocab = load_data(config)
    params = load_phase(config, 1, vocab)
    result = enhance_latent(config, params, corpora['train'])
    save_phase(config, params, 2)
    export_table([row.as_dict() for row in result.trajectory], _out(config, 'trajectory.csv'))
    return result


def run_train_filters(config: PipelineConfig) -> ModelParams:
    corpora, vocab = load_data(config)
    params = load_phase(config, 2, vocab)
    histories = train_filters(config, corpora['train'], params, valid=corpora.get('valid'))
    save_phase(config, params, 3)
    _update_history(config, {name: h.as_dict() for name, h in histories.items()})
    return params


def _eval_split(config: PipelineConfig, corpora: Dict[str, Corpus]) -> Corpus:
    corpus = corpora.get(config.eval_split)
    if corpus is None or not len(corpus):
        raise ContractError(f"the {config.eval_split} split is empty or missing in {config.data_path}")
    return corpus


def run_evaluate(config: PipelineConfig) -> EvalReport:
    corpora, vocab = load_data(config)
    params = load_phase(config, 3, vocab)
    report = evaluate_model(params, _eval_split(config, corpora), config.decode_max_len)
    export_report(report, _out(config, 'metrics.txt'))
    print_metrics_summary(report)
    return report


def run_cluster_report(config: PipelineConfig, phase: Optional[int] = None):
    """Per-point cluster report of the latent training sample under the latest available classifier."""
    corpora, vocab = load_data(config)
    if phase is None:
        phase = 3 if Path(checkpoint_path(config, 3)).is_file() else 2
    params = load_phase(config, phase, vocab)
    corpus = corpora['train']
    _, rows = latent_sample(config, params, corpus)
    subset = corpus.subset(rows)
    assignments, points = route_assignments(subset.sources(), params)
    n_clusters = params['C']['W2'].shape[1]
    tags = subset.tags() if any(subset.tags()) else None
    frame = cluster_report(points, assignments, n_clusters, tags)
    frame.to_csv(_out(config, 'cluster_report.csv'), index=False)

    sizes = [int((assignments == c).sum()) for c in range(n_clusters)]
    values = frame['silhouette']
    silhouette = None if values.isna().all() else float(values.mean())
    composition = cluster_composition(assignments, tags, n_clusters) if tags else None
    print_cluster_summary(sizes, silhouette, composition)
    return frame


def run_pipeline(config: PipelineConfig) -> EvalReport:
    ensure_data(config)
    run_train(config)
    run_enhance(config)
    run_train_filters(config)
    report = run_evaluate(config)
    run_cluster_report(config)
    return report


COMMANDS = {
    'gen-data': run_gen_data,
    'train': run_train,
    'enhance': run_enhance,
    'train-filters': run_train_filters,
    'evaluate': run_evaluate,
    'cluster-report': run_cluster_report,
    'pipeline': run_pipeline,
}
