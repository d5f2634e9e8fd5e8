"""
Network pieces: bidirectional LSTM encoder R, enhancer T, cluster classifier C
and attention LSTM decoders (dummy Q0 and filters Q1..Qn).

Every forward function is batched: B right-padded sequences in, B rows out.
A single sequence is the B = 1 case.

Parameter groups
    R   emb [V,E]; W_x_fw, W_h_fw, b_fw; W_x_bw, W_h_bw, b_bw   (gates i,f,g,o)
    T   W1 [2H,D], b1, W2 [D,D], b2
    C   W1 [D,D],  b1, W2 [D,n], b2
    Qj  emb [V,E]; W_x [E,4D], W_h [D,4D], b; W_att [2H,D]; W_out [2D,V], b_out
"""

import dataclasses
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, ContractError, ShapeError
from .models import EOS, PAD, SOS, DecoderState, EncoderOutput, ModelParams, ParamGroup
from .tensor import (
    Tensor, add, batched_dot, concat, constant, dropout, embedding, log_softmax,
    matmul, mul, nll_loss, no_grad, relu, select, sigmoid, slice_last, softmax,
    stack, tanh, uniform_bias, weighted_sum, xavier_uniform,
)

ATTENTION_PAD_PENALTY = -1e9


@dataclass(frozen=True)
class ModelDims:
    vocab_size: int
    embed: int = 150
    hidden: int = 200
    latent: int = 200
    n_clusters: int = 2

    def __post_init__(self):
        for key in ('vocab_size', 'embed', 'hidden', 'latent'):
            if getattr(self, key) < 1:
                raise ConfigError(key, "must be a positive integer")
        if self.n_clusters < 1:
            raise ConfigError('n_filters', "must be >= 1")


def dims_from_params(params: ModelParams) -> ModelDims:
    """Recover dimensions from parameter shapes (used to guard checkpoints)."""
    R = params['R']
    vocab_size, embed = R['emb'].shape
    hidden = R['W_h_fw'].shape[0]
    latent = params['T']['W2'].shape[1] if 'T' in params else hidden
    n_clusters = params['C']['W2'].shape[1] if 'C' in params else 1
    return ModelDims(vocab_size, embed, hidden, latent, n_clusters)


# ── initialisation ─────────────────────────────────────────────────────────

def _lstm_bias(hidden: int, dtype) -> np.ndarray:
    b = np.zeros(4 * hidden, dtype=dtype)
    b[hidden:2 * hidden] = 1.0
    return b


def init_encoder(rng: np.random.Generator, dims: ModelDims, dtype=np.float64) -> ParamGroup:
    group = ParamGroup('R')
    group.add('emb', xavier_uniform(rng, dims.vocab_size, dims.embed, dtype))
    for direction in ('fw', 'bw'):
        group.add(f'W_x_{direction}', xavier_uniform(rng, dims.embed, 4 * dims.hidden, dtype))
        group.add(f'W_h_{direction}', xavier_uniform(rng, dims.hidden, 4 * dims.hidden, dtype))
        group.add(f'b_{direction}', _lstm_bias(dims.hidden, dtype))
    return group


def init_enhancer(rng: np.random.Generator, dims: ModelDims, dtype=np.float64) -> ParamGroup:
    group = ParamGroup('T')
    group.add('W1', xavier_uniform(rng, 2 * dims.hidden, dims.latent, dtype))
    group.add('b1', np.zeros(dims.latent, dtype=dtype))
    group.add('W2', xavier_uniform(rng, dims.latent, dims.latent, dtype))
    group.add('b2', np.zeros(dims.latent, dtype=dtype))
    return group


def init_classifier(rng: np.random.Generator, latent: int, n_clusters: int,
                    dtype=np.float64) -> ParamGroup:
    """Biases are drawn in +-1/sqrt(fan_in); zero biases could not be moved by rescaling."""
    if n_clusters < 1:
        raise ConfigError('n_filters', "must be >= 1")
    group = ParamGroup('C')
    group.add('W1', xavier_uniform(rng, latent, latent, dtype))
    group.add('b1', uniform_bias(rng, latent, latent, dtype))
    group.add('W2', xavier_uniform(rng, latent, n_clusters, dtype))
    group.add('b2', uniform_bias(rng, latent, n_clusters, dtype))
    return group


def init_decoder(rng: np.random.Generator, name: str, dims: ModelDims,
                 dtype=np.float64) -> ParamGroup:
    group = ParamGroup(name)
    group.add('emb', xavier_uniform(rng, dims.vocab_size, dims.embed, dtype))
    group.add('W_x', xavier_uniform(rng, dims.embed, 4 * dims.latent, dtype))
    group.add('W_h', xavier_uniform(rng, dims.latent, 4 * dims.latent, dtype))
    group.add('b', _lstm_bias(dims.latent, dtype))
    group.add('W_att', xavier_uniform(rng, 2 * dims.hidden, dims.latent, dtype))
    group.add('W_out', xavier_uniform(rng, 2 * dims.latent, dims.vocab_size, dtype))
    group.add('b_out', np.zeros(dims.vocab_size, dtype=dtype))
    return group


# ── batching ───────────────────────────────────────────────────────────────

def pad_batch(sequences: Sequence[Sequence[int]]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Right-pad with PAD; returns (ids [B,L], mask [B,L], lengths [B])."""
    if not sequences:
        raise ContractError("cannot encode an empty batch")
    lengths = np.array([len(s) for s in sequences], dtype=np.int64)
    if lengths.min() == 0:
        raise ContractError("cannot encode an empty sequence")
    ids = np.full((len(sequences), int(lengths.max())), PAD, dtype=np.int64)
    for row, seq in enumerate(sequences):
        ids[row, :len(seq)] = seq
    mask = (np.arange(ids.shape[1])[None, :] < lengths[:, None]).astype(np.float64)
    return ids, mask, lengths


def _masked_update(new: Tensor, old: Tensor, keep: np.ndarray) -> Tensor:
    # keep: [B] 1.0 where the step is a real token
    if keep.all():
        return new
    m = np.repeat(keep[:, None], new.shape[1], axis=1).astype(new.dtype)
    return add(mul(new, constant(m, like=new)), mul(old, constant(1.0 - m, like=old)))


# ── LSTM ───────────────────────────────────────────────────────────────────

def lstm_gates(z: Tensor, c: Tensor) -> Tuple[Tensor, Tensor]:
    """Pre-activations z [B,4H] in gate order i, f, g, o -> (h', c')."""
    hidden = c.shape[-1]
    if z.shape[-1] != 4 * hidden:
        raise ShapeError(f"lstm: gate pre-activations {z.shape} vs cell {c.shape}")
    i = sigmoid(slice_last(z, 0, hidden))
    f = sigmoid(slice_last(z, hidden, 2 * hidden))
    g = tanh(slice_last(z, 2 * hidden, 3 * hidden))
    o = sigmoid(slice_last(z, 3 * hidden, 4 * hidden))
    c_new = add(mul(f, c), mul(i, g))
    h_new = mul(o, tanh(c_new))
    return h_new, c_new


def lstm_cell_step(x: Tensor, h: Tensor, c: Tensor,
                   W_x: Tensor, W_h: Tensor, b: Tensor) -> Tuple[Tensor, Tensor]:
    if x.shape[-1] != W_x.shape[0] or h.shape[-1] != W_h.shape[0]:
        raise ShapeError(f"lstm: input {x.shape} / state {h.shape} vs weights "
                         f"{W_x.shape} / {W_h.shape}")
    z = add(add(matmul(x, W_x), matmul(h, W_h)), b)
    return lstm_gates(z, c)


def _run_direction(inputs: Tensor, mask: np.ndarray, W_x: Tensor, W_h: Tensor, b: Tensor,
                   reverse: bool) -> Tuple[List[Tensor], Tensor, Tensor]:
    batch, steps = mask.shape
    hidden = W_h.shape[0]
    projected = add(matmul(inputs, W_x), b)
    h = constant(np.zeros((batch, hidden)), like=W_h)
    c = constant(np.zeros((batch, hidden)), like=W_h)
    outputs: List[Optional[Tensor]] = [None] * steps
    order = range(steps - 1, -1, -1) if reverse else range(steps)
    for t in order:
        z = add(select(projected, t, axis=1), matmul(h, W_h))
        h_new, c_new = lstm_gates(z, c)
        keep = mask[:, t]
        h = _masked_update(h_new, h, keep)
        c = _masked_update(c_new, c, keep)
        outputs[t] = h
    return outputs, h, c


def encode_batch(sequences: Sequence[Sequence[int]], R: ParamGroup,
                 dropout_p: float = 0.0, rng: Optional[np.random.Generator] = None) -> EncoderOutput:
    ids, mask, lengths = pad_batch(sequences)
    inputs = dropout(embedding(R['emb'], ids), dropout_p, rng)
    fw, h_fw, c_fw = _run_direction(inputs, mask, R['W_x_fw'], R['W_h_fw'], R['b_fw'], reverse=False)
    bw, h_bw, c_bw = _run_direction(inputs, mask, R['W_x_bw'], R['W_h_bw'], R['b_bw'], reverse=True)
    steps = concat([stack(fw, axis=1), stack(bw, axis=1)], axis=-1)
    steps = dropout(steps, dropout_p, rng)
    return EncoderOutput(
        step_outputs=steps,
        final_hidden=concat([h_fw, h_bw], axis=-1),
        final_cell=concat([c_fw, c_bw], axis=-1),
        mask=mask,
        lengths=lengths,
    )


def encode(tokens: Sequence[int], R: ParamGroup) -> EncoderOutput:
    """Single-sequence form: step_outputs [1,L,2H], final_hidden [1,2H]."""
    if len(tokens) == 0:
        raise ContractError("cannot encode an empty sequence")
    return encode_batch([tokens], R)


# ── enhancer and classifier ────────────────────────────────────────────────

def enhance(h: Tensor, T: ParamGroup) -> Tensor:
    hidden = tanh(add(matmul(h, T['W1']), T['b1']))
    return add(matmul(hidden, T['W2']), T['b2'])


def classifier_logits(r_e: Tensor, C: ParamGroup) -> Tensor:
    if C['W2'].shape[1] < 1:
        raise ConfigError('n_filters', "must be >= 1")
    hidden = relu(add(matmul(r_e, C['W1']), C['b1']))
    return add(matmul(hidden, C['W2']), C['b2'])


def classify(r_e: Tensor, C: ParamGroup) -> Tensor:
    return softmax(classifier_logits(r_e, C), axis=-1)


def encode_latent(sequences: Sequence[Sequence[int]], params: ModelParams,
                  batch_size: int = 64) -> np.ndarray:
    """r_e rows for every sequence, without recording anything on the tape."""
    rows = []
    with no_grad():
        for start in range(0, len(sequences), batch_size):
            enc = encode_batch(sequences[start:start + batch_size], params['R'])
            rows.append(enhance(enc.final_hidden, params['T']).data)
    return np.concatenate(rows, axis=0)


# ── attention decoder ──────────────────────────────────────────────────────

def project_keys(enc: EncoderOutput, Q: ParamGroup) -> Tensor:
    return matmul(enc.step_outputs, Q['W_att'])


def _attend_keys(hidden: Tensor, keys: Tensor, mask: np.ndarray) -> Tuple[Tensor, Tensor]:
    scores = batched_dot(keys, hidden)
    if not mask.all():
        scores = add(scores, constant((1.0 - mask) * ATTENTION_PAD_PENALTY, like=scores))
    weights = softmax(scores, axis=-1)
    return weighted_sum(weights, keys), weights


def attend(hidden: Tensor, enc: EncoderOutput, Q: ParamGroup) -> Tuple[Tensor, Tensor]:
    """Dot-product attention over projected encoder steps -> (context [B,D], weights [B,L])."""
    return _attend_keys(hidden, project_keys(enc, Q), enc.mask)


def init_decoder_state(r_e: Tensor, enc: EncoderOutput, Q: ParamGroup) -> DecoderState:
    """r_e is the first hidden state; the first cell is zero and the first input is SOS."""
    if r_e.shape[-1] != Q['W_h'].shape[0]:
        raise ShapeError(f"decoder: latent {r_e.shape} vs hidden size {Q['W_h'].shape[0]}")
    batch = r_e.shape[0]
    return DecoderState(
        hidden=r_e,
        cell=constant(np.zeros(r_e.shape), like=r_e),
        prev_ids=np.full(batch, SOS, dtype=np.int64),
        keys=project_keys(enc, Q),
        mask=enc.mask,
    )


def choose_tokens(logits: np.ndarray) -> np.ndarray:
    """Greedy choice per row; PAD and SOS are never chosen, ties go to the lowest id."""
    masked = np.array(logits, dtype=np.float64, copy=True)
    masked[:, PAD] = -np.inf
    masked[:, SOS] = -np.inf
    return np.argmax(masked, axis=-1)


def decode_step(state: DecoderState, Q: ParamGroup, dropout_p: float = 0.0,
                rng: Optional[np.random.Generator] = None) -> Tuple[Tensor, DecoderState]:
    x = dropout(embedding(Q['emb'], state.prev_ids), dropout_p, rng)
    h, c = lstm_cell_step(x, state.hidden, state.cell, Q['W_x'], Q['W_h'], Q['b'])
    context, _ = _attend_keys(h, state.keys, state.mask)
    features = dropout(concat([h, context], axis=-1), dropout_p, rng)
    logits = add(matmul(features, Q['W_out']), Q['b_out'])
    new_state = dataclasses.replace(state, hidden=h, cell=c,
                                    prev_ids=choose_tokens(logits.data))
    return logits, new_state


def greedy_decode(r_e: Tensor, enc: EncoderOutput, Q: ParamGroup, max_len: int) -> List[List[int]]:
    """One token list per batch row, EOS excluded, at most max_len tokens each."""
    if max_len < 1:
        raise ContractError("max_len must be >= 1")
    outputs: List[List[int]] = [[] for _ in range(r_e.shape[0])]
    finished = np.zeros(r_e.shape[0], dtype=bool)
    with no_grad():
        state = init_decoder_state(r_e, enc, Q)
        for _ in range(max_len):
            _, state = decode_step(state, Q)
            for row, token in enumerate(state.prev_ids):
                if finished[row]:
                    continue
                if token == EOS:
                    finished[row] = True
                else:
                    outputs[row].append(int(token))
            if finished.all():
                break
    return outputs


@dataclass
class ForcedDecoding:
    loss: Tensor
    predictions: np.ndarray   # [B, T] greedy choice at every forced step
    gold: np.ndarray          # [B, T] y_1..y_T EOS, PAD beyond
    weights: np.ndarray       # [B, T] 1 on non-pad positions


def teacher_forcing_arrays(targets: Sequence[Sequence[int]]) -> Tuple[np.ndarray, np.ndarray]:
    """Decoder inputs SOS y_1..y_{T-1} and gold outputs y_1..y_T EOS, right-padded with PAD."""
    steps = max(len(t) for t in targets) + 1
    gold = np.full((len(targets), steps), PAD, dtype=np.int64)
    inputs = np.full((len(targets), steps), PAD, dtype=np.int64)
    for row, target in enumerate(targets):
        gold[row, :len(target)] = target
        gold[row, len(target)] = EOS
        inputs[row, 0] = SOS
        inputs[row, 1:len(target) + 1] = target
    return inputs, gold


def class_weights(vocab_size: int) -> np.ndarray:
    w = np.ones(vocab_size)
    w[PAD] = 0.0
    return w


def teacher_forced(r_e: Tensor, enc: EncoderOutput, Q: ParamGroup, targets: Sequence[Sequence[int]],
                   dropout_p: float = 0.0, rng: Optional[np.random.Generator] = None) -> ForcedDecoding:
    inputs, gold = teacher_forcing_arrays(targets)
    state = init_decoder_state(r_e, enc, Q)
    log_probs = []
    predictions = np.zeros_like(gold)
    for t in range(gold.shape[1]):
        state = dataclasses.replace(state, prev_ids=inputs[:, t])
        logits, state = decode_step(state, Q, dropout_p, rng)
        predictions[:, t] = state.prev_ids
        log_probs.append(log_softmax(logits, axis=-1))
    # step-major rows: row t*B + b
    loss = nll_loss(concat(log_probs, axis=0), gold.T.reshape(-1), class_weights(Q['emb'].shape[0]))
    return ForcedDecoding(loss, predictions, gold, (gold != PAD).astype(np.float64))
