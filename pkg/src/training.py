"""
The three training phases and evaluation.

    train_phase1        R + T + Q0 jointly on the NLL loss; R, T frozen, Q0 dropped, C initialised
    enhance_latent      RL enhancement of C over a fixed latent sample
    route_batch         argmax routing of pairs to clusters under frozen R, T, C
    train_filters       clone one initialisation into Q1..Qn, train each on its own cluster
    evaluate_model      route, greedy-decode with the assigned filter, score
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .clustering import assign_clusters, silhouette_score
from .config import PipelineConfig
from .errors import ContractError, DivergenceError, PhaseOrderError, SingleClusterError
from .metrics import corpus_bleu, exact_match, token_matches
from .models import Corpus, EvalReport, LatentBatch, ModelParams, ParamGroup, RoutedBatch
from .optim import Adam
from .sac import ClusterEnv, EnhancementResult, SacAgent, enhance_classifier
from .seq2seq import (
    ModelDims, classify, encode_batch, encode_latent, enhance, greedy_decode, init_classifier,
    init_decoder, init_encoder, init_enhancer, teacher_forced,
)
from .tensor import Tensor, backward, constant, make_rng, no_grad
from .utils import phase_seed

logger = logging.getLogger(__name__)


@dataclass
class TrainingHistory:
    name: str
    batch_losses: List[float] = field(default_factory=list)
    epoch_losses: List[float] = field(default_factory=list)
    valid_losses: List[float] = field(default_factory=list)
    stopped_early: bool = False

    def as_dict(self) -> Dict:
        return {
            'batch_losses': self.batch_losses,
            'epoch_losses': self.epoch_losses,
            'valid_losses': self.valid_losses,
            'stopped_early': self.stopped_early,
        }


def model_dims(config: PipelineConfig, vocab_size: int, n_clusters: Optional[int] = None) -> ModelDims:
    return ModelDims(vocab_size, config.embed, config.hidden, config.latent,
                     config.n_filters if n_clusters is None else n_clusters)


def batches(n_items: int, batch_size: int,
            rng: Optional[np.random.Generator] = None) -> List[np.ndarray]:
    order = rng.permutation(n_items) if rng is not None else np.arange(n_items)
    return [order[i:i + batch_size] for i in range(0, n_items, batch_size)]


def _decoder_loss(R: ParamGroup, T: ParamGroup, Q: ParamGroup, corpus: Corpus, rows: Sequence[int],
                  dropout_p: float = 0.0, rng: Optional[np.random.Generator] = None,
                  encoder_dropout: bool = True) -> Tensor:
    sources = [corpus.pairs[i].source for i in rows]
    targets = [corpus.pairs[i].target for i in rows]
    enc = encode_batch(sources, R, dropout_p if encoder_dropout else 0.0,
                       rng if encoder_dropout else None)
    r_e = enhance(enc.final_hidden, T)
    return teacher_forced(r_e, enc, Q, targets, dropout_p, rng).loss


def validation_loss(R: ParamGroup, T: ParamGroup, Q: ParamGroup, corpus: Corpus,
                    batch_size: int) -> float:
    """Mean NLL over non-pad positions, batch means weighted by batch size."""
    total, count = 0.0, 0
    with no_grad():
        for rows in batches(len(corpus), batch_size):
            total += _decoder_loss(R, T, Q, corpus, rows).item() * len(rows)
            count += len(rows)
    return total / max(count, 1)


def _fit_decoder(name: str, groups: List[ParamGroup], R: ParamGroup, T: ParamGroup, Q: ParamGroup,
                 corpus: Corpus, valid: Optional[Corpus], config: PipelineConfig,
                 rng: np.random.Generator, encoder_dropout: bool) -> TrainingHistory:
    optimizer = Adam(groups, lr=config.lr, clip=config.clip)
    history = TrainingHistory(name)
    rising = 0
    for epoch in range(1, config.epochs + 1):
        losses = []
        for number, rows in enumerate(batches(len(corpus), config.batch_size, rng), start=1):
            optimizer.zero_grad()
            loss = _decoder_loss(R, T, Q, corpus, rows, config.dropout, rng, encoder_dropout)
            if not np.isfinite(loss.item()):
                raise DivergenceError(f"{name}: non-finite loss at epoch {epoch}, batch {number}")
            backward(loss)
            optimizer.step()
            losses.append(loss.item())
        history.batch_losses.extend(losses)
        history.epoch_losses.append(float(np.mean(losses)))

        message = f"{name} epoch {epoch}/{config.epochs}  loss={history.epoch_losses[-1]:.4f}"
        if valid is not None and len(valid):
            history.valid_losses.append(validation_loss(R, T, Q, valid, config.batch_size))
            message += f"  valid={history.valid_losses[-1]:.4f}"
            if len(history.valid_losses) > 1 and history.valid_losses[-1] > history.valid_losses[-2]:
                rising += 1
            else:
                rising = 0
        logger.info(message)
        if rising >= config.patience:
            history.stopped_early = True
            logger.info(f"{name}: validation loss rose {rising} epochs in a row, stopping")
            break
    return history


def train_phase1(config: PipelineConfig, corpus: Corpus, vocab_size: int,
                 valid: Optional[Corpus] = None) -> Tuple[ModelParams, TrainingHistory]:
    """
    Train R + T + Q0 with teacher forcing, then freeze R and T, drop Q0
    and add a freshly initialised classifier C.
    """
    if not len(corpus):
        raise ContractError("phase 1 needs a non-empty training corpus")
    corpus.validate(vocab_size)
    dims = model_dims(config, vocab_size)
    init_rng = make_rng(phase_seed(config.seed, 'phase1_init'))
    R = init_encoder(init_rng, dims, config.dtype)
    T = init_enhancer(init_rng, dims, config.dtype)
    Q0 = init_decoder(init_rng, 'Q0', dims, config.dtype)

    history = _fit_decoder('phase1', [R, T, Q0], R, T, Q0, corpus, valid, config,
                           make_rng(phase_seed(config.seed, 'phase1_train')), encoder_dropout=True)
    params = ModelParams([R, T, Q0])
    R.freeze()
    T.freeze()
    params.drop('Q0')
    params.add(init_classifier(make_rng(phase_seed(config.seed, 'classifier_init')),
                               dims.latent, dims.n_clusters, config.dtype))
    return params, history


def require_frozen_encoder(params: ModelParams, command: str = 'train'):
    for name in ('R', 'T'):
        if name not in params:
            raise PhaseOrderError(f"parameter group {name} is missing: run `{command}` first")
        if not params[name].frozen:
            raise PhaseOrderError(f"parameter group {name} is not frozen: run `{command}` first")


def latent_sample(config: PipelineConfig, params: ModelParams, corpus: Corpus) -> Tuple[np.ndarray, np.ndarray]:
    """r_e for a fixed, seeded subsample of at most silhouette_sample training pairs -> (points, row ids)."""
    rows = np.arange(len(corpus))
    if len(rows) > config.silhouette_sample:
        rng = make_rng(phase_seed(config.seed, 'latent_sample'))
        rows = np.sort(rng.choice(len(rows), size=config.silhouette_sample, replace=False))
    points = encode_latent([corpus.pairs[i].source for i in rows], params)
    return points, rows


def enhance_latent(config: PipelineConfig, params: ModelParams, corpus: Corpus,
                   points: Optional[np.ndarray] = None) -> EnhancementResult:
    """Phase 2: SAC tunes C on the frozen latent sample; params['C'] is replaced by the best classifier."""
    require_frozen_encoder(params)
    if points is None:
        points, _ = latent_sample(config, params, corpus)
    env = ClusterEnv(points, params['C'], k=config.k, b=config.b, target=config.target,
                     episode_steps=config.episode_steps, action_low=config.action_low,
                     action_high=config.action_high)
    agent = SacAgent(env.observation_dim, env.action_dim, make_rng(phase_seed(config.seed, 'rl')),
                     hidden=config.sac_hidden, lr=config.sac_lr, batch_size=config.sac_batch,
                     buffer_size=config.buffer_size, gamma=config.gamma, tau=config.tau)
    result = enhance_classifier(env, agent, max_steps=config.max_steps,
                                warmup_steps=config.warmup_steps,
                                reward_scale=config.reward_scale, log_every=config.log_every)
    params.add(result.classifier)
    logger.info(f"phase 2: S_c {result.initial_silhouette:.4f} -> {result.best_silhouette:.4f} "
                f"in {result.steps} steps (target {'reached' if result.reached_target else 'not reached'})")
    return result


def route_assignments(sources: Sequence[Sequence[int]], params: ModelParams) -> Tuple[np.ndarray, np.ndarray]:
    """(cluster per source, latent points) under the current R, T, C."""
    points = encode_latent(sources, params)
    with no_grad():
        probs = classify(constant(points), params['C']).data
    return assign_clusters(probs), points


def route_batch(corpus: Corpus, params: ModelParams) -> RoutedBatch:
    n_clusters = params['C']['W2'].shape[1]
    assignments, _ = route_assignments(corpus.sources(), params)
    return RoutedBatch([[int(i) for i in np.flatnonzero(assignments == c)] for c in range(n_clusters)])


def init_filters(config: PipelineConfig, dims: ModelDims) -> List[ParamGroup]:
    """One random decoder initialisation cloned into Q1..Qn."""
    template = init_decoder(make_rng(phase_seed(config.seed, 'filter_init')), 'Q1', dims, config.dtype)
    return [template.clone(f'Q{i}') for i in range(1, dims.n_clusters + 1)]


def train_filters(config: PipelineConfig, corpus: Corpus, params: ModelParams,
                  routing: Optional[RoutedBatch] = None,
                  valid: Optional[Corpus] = None) -> Dict[str, TrainingHistory]:
    """
    Phase 3. Filter Qi sees only the pairs routed to cluster i-1, with its
    own optimizer state and random stream; an empty cluster leaves its
    filter at the shared initialisation. Adds Q1..Qn to params.
    """
    require_frozen_encoder(params)
    if 'C' not in params:
        raise PhaseOrderError("classifier C is missing: run `enhance` first")
    if routing is None:
        routing = route_batch(corpus, params)
    if not any(routing.clusters):
        raise ContractError("every cluster is empty; nothing to train")

    R, T = params['R'], params['T']
    dims = ModelDims(R['emb'].shape[0], R['emb'].shape[1], R['W_h_fw'].shape[0],
                     T['W2'].shape[1], len(routing.clusters))
    filters = init_filters(config, dims)
    valid_routing = route_batch(valid, params) if valid is not None and len(valid) else None

    def fit(index: int) -> Optional[TrainingHistory]:
        rows = routing.clusters[index]
        Q = filters[index]
        if not rows:
            logger.info(f"{Q.name}: cluster {index} is empty, filter left at initialisation")
            return None
        cluster_valid = valid.subset(valid_routing.clusters[index]) if valid_routing else None
        rng = make_rng(phase_seed(config.seed, 'filter_init', index + 1))
        logger.info(f"{Q.name}: training on {len(rows)} pairs")
        return _fit_decoder(Q.name, [Q], R, T, Q, corpus.subset(rows), cluster_valid, config,
                            rng, encoder_dropout=False)

    indices = range(len(filters))
    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(fit, indices))
    else:
        results = [fit(i) for i in indices]

    for Q in filters:
        params.add(Q)
    return {Q.name: h for Q, h in zip(filters, results) if h is not None}


def evaluate_model(params: ModelParams, corpus: Corpus, max_len: int = 32,
                   batch_size: int = 64) -> EvalReport:
    """Route every pair, decode greedily with its filter and score against the references."""
    if not len(corpus):
        raise ContractError(f"cannot evaluate an empty {corpus.split} split")
    filter_names = params.filter_names()
    if not filter_names:
        raise PhaseOrderError("no filters in the model: run `train-filters` first")
    n_clusters = params['C']['W2'].shape[1]
    if len(filter_names) != n_clusters:
        raise ContractError(f"{len(filter_names)} filters for {n_clusters} clusters")

    assignments, points = route_assignments(corpus.sources(), params)
    hypotheses: List[Optional[List[int]]] = [None] * len(corpus)
    matched = counted = 0
    with no_grad():
        for cluster, name in enumerate(filter_names):
            members = np.flatnonzero(assignments == cluster)
            for start in range(0, len(members), batch_size):
                rows = members[start:start + batch_size]
                sources = [corpus.pairs[i].source for i in rows]
                targets = [corpus.pairs[i].target for i in rows]
                enc = encode_batch(sources, params['R'])
                r_e = enhance(enc.final_hidden, params['T'])
                for row, output in zip(rows, greedy_decode(r_e, enc, params[name], max_len)):
                    hypotheses[row] = output
                forced = teacher_forced(r_e, enc, params[name], targets)
                m, c = token_matches(forced.predictions, forced.gold)
                matched += m
                counted += c

    references = [list(p.target) for p in corpus]
    batch = LatentBatch(points, assignments, n_clusters)
    try:
        silhouette: Optional[float] = silhouette_score(batch).mean
    except SingleClusterError:
        silhouette = None
    return EvalReport(
        token_accuracy=matched / counted,
        exact_match=exact_match(hypotheses, references),
        bleu=corpus_bleu(hypotheses, references),
        cluster_counts=[int(c) for c in batch.sizes()],
        silhouette=silhouette,
        n_pairs=len(corpus),
        split=corpus.split,
    )
