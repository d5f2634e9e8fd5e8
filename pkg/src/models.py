"""
Core data models for the LMS2S system.

Classes:
    Vocabulary     -- token <-> id maps with reserved PAD/SOS/EOS/UNK
    SentencePair   -- one integer-coded (source, target) pair
    Corpus         -- one split of sentence pairs
    ParamGroup     -- named tensors with a frozen flag (R, T, C, Q0, Q1..Qn)
    ModelParams    -- ordered collection of parameter groups
    EncoderOutput  -- per-step and final states of the bidirectional encoder
    DecoderState   -- decoder recurrence state plus cached attention keys
    LatentBatch    -- enhanced points with their cluster assignments
    SilhouetteReport, RoutedBatch, EvalReport, SacTransition, TrajectoryRow
"""

import hashlib
import re
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ContractError
from .tensor import Tensor

PAD, SOS, EOS, UNK = 0, 1, 2, 3
RESERVED_TOKENS = ('<pad>', '<sos>', '<eos>', '<unk>')


class Vocabulary:

    def __init__(self, tokens: Iterable[str] = ()):
        self.token_to_id: Dict[str, int] = {}
        self.id_to_token: List[str] = []
        for token in RESERVED_TOKENS:
            self._add(token)
        for token in tokens:
            self._add(token)

    def _add(self, token: str) -> int:
        if token not in self.token_to_id:
            self.token_to_id[token] = len(self.id_to_token)
            self.id_to_token.append(token)
        return self.token_to_id[token]

    @classmethod
    def from_sentences(cls, sentences: Iterable[Sequence[str]]) -> 'Vocabulary':
        """Ids follow order of first appearance; minimum frequency is 1."""
        return cls(token for sentence in sentences for token in sentence)

    def encode(self, tokens: Sequence[str]) -> List[int]:
        return [self.token_to_id.get(t, UNK) for t in tokens]

    def decode(self, ids: Sequence[int]) -> List[str]:
        return [self.id_to_token[i] for i in ids]

    def __len__(self):
        return len(self.id_to_token)

    def __contains__(self, token: str):
        return token in self.token_to_id

    def __repr__(self):
        return f"Vocabulary({len(self)} tokens)"


@dataclass(frozen=True)
class SentencePair:
    source: Tuple[int, ...]
    target: Tuple[int, ...]
    tag: str = ''


@dataclass
class Corpus:
    split: str
    pairs: List[SentencePair] = field(default_factory=list)
    rejected: int = 0

    def __len__(self):
        return len(self.pairs)

    def __iter__(self) -> Iterator[SentencePair]:
        return iter(self.pairs)

    def sources(self) -> List[Tuple[int, ...]]:
        return [p.source for p in self.pairs]

    def targets(self) -> List[Tuple[int, ...]]:
        return [p.target for p in self.pairs]

    def tags(self) -> List[str]:
        return [p.tag for p in self.pairs]

    def subset(self, indices: Sequence[int]) -> 'Corpus':
        return Corpus(self.split, [self.pairs[i] for i in indices])

    def validate(self, vocab_size: int):
        for n, pair in enumerate(self.pairs):
            if not pair.source or not pair.target:
                raise ContractError(f"{self.split} pair {n}: empty sequence")
            if max(pair.source + pair.target) >= vocab_size or min(pair.source + pair.target) < 0:
                raise ContractError(f"{self.split} pair {n}: token id outside vocabulary of {vocab_size}")

    def __repr__(self):
        return f"Corpus({self.split}, {len(self.pairs)} pairs)"


@dataclass
class ParamGroup:
    name: str
    params: Dict[str, Tensor] = field(default_factory=OrderedDict)
    frozen: bool = False

    def __post_init__(self):
        if self.frozen:
            self.freeze()

    def add(self, key: str, data: np.ndarray) -> Tensor:
        tensor = Tensor(data, requires_grad=not self.frozen, name=f"{self.name}/{key}")
        self.params[key] = tensor
        return tensor

    def __getitem__(self, key: str) -> Tensor:
        return self.params[key]

    def __contains__(self, key: str):
        return key in self.params

    def __iter__(self) -> Iterator[Tensor]:
        return iter(self.params.values())

    def items(self):
        return self.params.items()

    def freeze(self):
        self.frozen = True
        for tensor in self.params.values():
            tensor.requires_grad = False
            tensor.grad = None

    def zero_grad(self):
        for tensor in self.params.values():
            tensor.grad = None

    def clone(self, name: Optional[str] = None) -> 'ParamGroup':
        group = ParamGroup(name or self.name)
        for key, tensor in self.params.items():
            group.add(key, tensor.data)
        if self.frozen:
            group.freeze()
        return group

    def digest(self) -> str:
        """SHA-256 over names, shapes and raw bytes; equal digests mean equal bytes."""
        h = hashlib.sha256()
        for key, tensor in self.params.items():
            h.update(key.encode('utf-8'))
            h.update(str(tensor.shape).encode('ascii'))
            h.update(np.ascontiguousarray(tensor.data).tobytes())
        return h.hexdigest()

    def __repr__(self):
        state = "frozen" if self.frozen else "trainable"
        return f"ParamGroup({self.name}, {len(self.params)} tensors, {state})"


_FILTER_NAME = re.compile(r'^Q([1-9][0-9]*)$')


class ModelParams:
    """Named groups: encoder R, enhancer T, classifier C, dummy decoder Q0, filters Q1..Qn."""

    def __init__(self, groups: Iterable[ParamGroup] = ()):
        self.groups: Dict[str, ParamGroup] = OrderedDict()
        for group in groups:
            self.add(group)

    def add(self, group: ParamGroup):
        self.groups[group.name] = group

    def drop(self, name: str):
        self.groups.pop(name, None)

    def __getitem__(self, name: str) -> ParamGroup:
        return self.groups[name]

    def __contains__(self, name: str):
        return name in self.groups

    def __iter__(self) -> Iterator[ParamGroup]:
        return iter(self.groups.values())

    def names(self) -> List[str]:
        return list(self.groups)

    def filter_names(self) -> List[str]:
        found = [(int(m.group(1)), name) for name in self.groups
                 for m in [_FILTER_NAME.match(name)] if m]
        return [name for _, name in sorted(found)]

    def digests(self) -> Dict[str, str]:
        return {name: group.digest() for name, group in self.groups.items()}

    def __repr__(self):
        return f"ModelParams({', '.join(self.groups)})"


@dataclass
class EncoderOutput:
    step_outputs: Tensor   # [B, L, 2H]
    final_hidden: Tensor   # [B, 2H]
    final_cell: Tensor     # [B, 2H]
    mask: np.ndarray       # [B, L], 1 on real tokens
    lengths: np.ndarray    # [B]

    @property
    def batch_size(self) -> int:
        return self.step_outputs.shape[0]


@dataclass
class DecoderState:
    hidden: Tensor          # [B, H]
    cell: Tensor            # [B, H]
    prev_ids: np.ndarray    # [B] previous output token ids
    keys: Tensor            # [B, L, H] encoder steps projected for attention
    mask: np.ndarray        # [B, L]


@dataclass
class LatentBatch:
    points: np.ndarray
    assignments: np.ndarray
    n_clusters: int

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        self.assignments = np.asarray(self.assignments, dtype=np.int64)
        if self.points.ndim != 2 or len(self.points) < 1:
            raise ContractError("latent batch needs a non-empty M x D matrix")
        if self.assignments.shape != (len(self.points),):
            raise ContractError("one assignment per latent point is required")
        if self.n_clusters < 1 or self.assignments.min() < 0 or self.assignments.max() >= self.n_clusters:
            raise ContractError(f"assignments must lie in [0, {self.n_clusters})")

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.n_clusters)

    def occupancy(self) -> np.ndarray:
        return self.sizes() / len(self.assignments)

    def non_empty(self) -> int:
        return int(np.count_nonzero(self.sizes()))


@dataclass
class SilhouetteReport:
    values: np.ndarray
    mean: float
    sizes: np.ndarray


@dataclass
class RoutedBatch:
    clusters: List[List[int]]

    @property
    def sizes(self) -> List[int]:
        return [len(c) for c in self.clusters]

    def non_empty(self) -> int:
        return sum(1 for c in self.clusters if c)

    def is_partition_of(self, n_items: int) -> bool:
        flat = sorted(i for c in self.clusters for i in c)
        return flat == list(range(n_items))


@dataclass
class EvalReport:
    token_accuracy: float
    exact_match: float
    bleu: float
    cluster_counts: List[int]
    silhouette: Optional[float]
    n_pairs: int
    split: str = 'test'

    def to_lines(self) -> List[str]:
        silhouette = 'nan' if self.silhouette is None else repr(float(self.silhouette))
        return [
            f"split: {self.split}",
            f"pairs: {self.n_pairs}",
            f"token_accuracy: {self.token_accuracy!r}",
            f"exact_match: {self.exact_match!r}",
            f"bleu: {self.bleu!r}",
            f"silhouette: {silhouette}",
            f"cluster_counts: {','.join(str(c) for c in self.cluster_counts)}",
        ]

    @classmethod
    def from_lines(cls, lines: Iterable[str]) -> 'EvalReport':
        values = {}
        for line in lines:
            if ':' in line:
                key, _, value = line.partition(':')
                values[key.strip()] = value.strip()
        silhouette = float(values['silhouette'])
        counts = values.get('cluster_counts', '')
        return cls(
            token_accuracy=float(values['token_accuracy']),
            exact_match=float(values['exact_match']),
            bleu=float(values['bleu']),
            cluster_counts=[int(c) for c in counts.split(',') if c],
            silhouette=None if np.isnan(silhouette) else silhouette,
            n_pairs=int(values['pairs']),
            split=values.get('split', 'test'),
        )


@dataclass
class SacTransition:
    observation: np.ndarray
    action: np.ndarray      # squashed, in [-1, 1]
    reward: float
    next_observation: np.ndarray
    done: bool


@dataclass
class TrajectoryRow:
    step: int
    episode: int
    episode_step: int
    silhouette: float
    reward: float
    done: bool
    best_silhouette: float
    action: List[float]

    def as_dict(self) -> Dict:
        row = {
            'step': self.step, 'episode': self.episode, 'episode_step': self.episode_step,
            'silhouette': self.silhouette, 'reward': self.reward, 'done': self.done,
            'best_silhouette': self.best_silhouette,
        }
        for i, a in enumerate(self.action):
            row[f'a{i}'] = a
        return row
