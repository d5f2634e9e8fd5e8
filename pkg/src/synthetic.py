"""
Synthetic data: a two-grammar parallel corpus and two-blob latent samples.

Grammar G1 reverses the source. Grammar G2 maps every source token through
a fixed permutation of the 40-token alphabet t0..t39. Sources are 4 to 9
tokens long; each grammar draws a token from its own half of the alphabet
(t0-t19 for G1, t20-t39 for G2) with probability `bias`, and from the whole
alphabet otherwise. No token marks the grammar.
"""

from typing import List, Tuple

import numpy as np

from .errors import ContractError
from .loader import TextPair
from .models import Corpus, SentencePair, Vocabulary
from .tensor import make_rng

ALPHABET = tuple(f"t{i}" for i in range(40))
TABLE_SEED = 0
DEFAULT_BIAS = 0.85
MIN_LEN, MAX_LEN = 4, 9


def substitution_table() -> np.ndarray:
    """table[i] is the index of the image of token t<i>; independent of the corpus seed."""
    return make_rng(TABLE_SEED).permutation(len(ALPHABET))


def synthetic_vocabulary() -> Vocabulary:
    return Vocabulary(ALPHABET)


def apply_grammar(grammar: str, source: List[str]) -> List[str]:
    if grammar == 'G1':
        return list(reversed(source))
    if grammar == 'G2':
        table = substitution_table()
        return [ALPHABET[table[int(token[1:])]] for token in source]
    raise ContractError(f"unknown grammar {grammar!r}")


def g1_count(n_pairs: int, mix: float) -> int:
    """round(mix * n_pairs), halves rounded up."""
    return int(np.floor(mix * n_pairs + 0.5))


def _draw_source(rng: np.random.Generator, grammar: str, bias: float) -> List[str]:
    length = int(rng.integers(MIN_LEN, MAX_LEN + 1))
    half = len(ALPHABET) // 2
    offset = 0 if grammar == 'G1' else half
    tokens = []
    for _ in range(length):
        if rng.random() < bias:
            index = offset + int(rng.integers(0, half))
        else:
            index = int(rng.integers(0, len(ALPHABET)))
        tokens.append(ALPHABET[index])
    return tokens


def generate_text_pairs(seed: int, n_pairs: int, mix: float,
                        bias: float = DEFAULT_BIAS) -> List[TextPair]:
    if not 0.0 < mix < 1.0:
        raise ContractError(f"mix must lie in (0, 1), got {mix}")
    if n_pairs < 2:
        raise ContractError(f"n_pairs must be >= 2, got {n_pairs}")
    if not 0.0 <= bias <= 1.0:
        raise ContractError(f"bias must lie in [0, 1], got {bias}")
    rng = make_rng(seed)
    n_g1 = g1_count(n_pairs, mix)
    grammars = np.array(['G1'] * n_g1 + ['G2'] * (n_pairs - n_g1))
    grammars = grammars[rng.permutation(n_pairs)]
    pairs = []
    for grammar in grammars:
        source = _draw_source(rng, str(grammar), bias)
        pairs.append((source, apply_grammar(str(grammar), source), str(grammar)))
    return pairs


def generate_synthetic_heterogeneous(seed: int, n_pairs: int, mix: float,
                                     bias: float = DEFAULT_BIAS) -> Corpus:
    """Integer-coded against synthetic_vocabulary(); each pair carries its grammar tag."""
    vocab = synthetic_vocabulary()
    pairs = [SentencePair(tuple(vocab.encode(s)), tuple(vocab.encode(t)), tag)
             for s, t, tag in generate_text_pairs(seed, n_pairs, mix, bias)]
    return Corpus('synthetic', pairs)


def two_blobs(rng: np.random.Generator, n_points: int = 256, dim: int = 4,
              separation: float = 10.0) -> Tuple[np.ndarray, np.ndarray]:
    """Unit-variance Gaussian blobs at +-separation/2 along a random direction."""
    direction = rng.standard_normal(dim)
    direction /= np.linalg.norm(direction)
    labels = np.repeat([0, 1], [n_points // 2, n_points - n_points // 2])
    centers = np.where(labels[:, None] == 0, -0.5, 0.5) * separation * direction
    return centers + rng.standard_normal((n_points, dim)), labels
