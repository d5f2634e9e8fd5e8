"""
Parallel-corpus loading utilities.

File format: one pair per line, "source<TAB>target[<TAB>tag]", UTF-8,
whitespace-tokenised. The optional third column is a free-form tag (the
synthetic corpus stores its grammar there).

Functions:
    read_pairs            -- parse a corpus file into token lists
    load_parallel_corpus  -- integer-code one split, building the vocabulary for train
    load_splits           -- load train/valid/test from a directory
    write_pairs           -- write token pairs back to the file format
"""

import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from .errors import CorpusFormatError
from .models import Corpus, SentencePair, Vocabulary

logger = logging.getLogger(__name__)

SPLITS = ('train', 'valid', 'test')

TextPair = Tuple[List[str], List[str], str]


def read_pairs(filepath: str) -> List[Tuple[int, TextPair]]:
    """Return (line number, (source tokens, target tokens, tag)) for every non-blank line."""
    path = Path(filepath)
    if not path.is_file():
        raise CorpusFormatError(f"{filepath}: no such corpus file")
    with open(path, 'r', encoding='utf-8') as f:
        lines = f.read().splitlines()

    pairs = []
    for number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        columns = line.split('\t')
        if len(columns) < 2:
            raise CorpusFormatError("expected 'source<TAB>target'", number)
        if len(columns) > 3:
            raise CorpusFormatError("too many TAB-separated columns", number)
        source, target = columns[0].split(), columns[1].split()
        if not source or not target:
            raise CorpusFormatError("empty source or target", number)
        tag = columns[2].strip() if len(columns) == 3 else ''
        pairs.append((number, (source, target, tag)))
    if not pairs:
        raise CorpusFormatError(f"{filepath}: corpus file is empty")
    return pairs


def load_parallel_corpus(filepath: str, vocab: Optional[Vocabulary] = None,
                         split: str = 'train', max_len: int = 30) -> Tuple[Corpus, Vocabulary]:
    """
    Without a vocabulary the file is treated as the training split and the
    vocabulary is built from it (minimum frequency 1). With one, unseen
    tokens map to UNK. Lines with a side longer than max_len are rejected
    and counted.
    """
    rows = read_pairs(filepath)
    kept = [(s, t, tag) for _, (s, t, tag) in rows if len(s) <= max_len and len(t) <= max_len]
    rejected = len(rows) - len(kept)
    if rejected:
        logger.info(f"{filepath}: rejected {rejected} pair(s) longer than {max_len} tokens")

    if vocab is None:
        vocab = Vocabulary.from_sentences(tokens for s, t, _ in kept for tokens in (s, t))

    pairs = [SentencePair(tuple(vocab.encode(s)), tuple(vocab.encode(t)), tag) for s, t, tag in kept]
    corpus = Corpus(split, pairs, rejected)
    logger.info(f"loaded {split}: {len(corpus)} pairs from {filepath}")
    return corpus, vocab


def load_splits(data_dir: str, max_len: int = 30,
                splits: Sequence[str] = SPLITS) -> Tuple[Dict[str, Corpus], Vocabulary]:
    """The vocabulary comes from train.tsv only; missing valid/test files are skipped."""
    data_path = Path(data_dir)
    train, vocab = load_parallel_corpus(str(data_path / 'train.tsv'), None, 'train', max_len)
    corpora = {'train': train}
    for split in splits:
        if split == 'train':
            continue
        path = data_path / f'{split}.tsv'
        if path.is_file():
            corpora[split], _ = load_parallel_corpus(str(path), vocab, split, max_len)
    return corpora, vocab


def write_pairs(pairs: Sequence[TextPair], filepath: str):
    Path(filepath).parent.mkdir(parents=True, exist_ok=True)
    with open(filepath, 'w', encoding='utf-8') as f:
        for source, target, tag in pairs:
            line = f"{' '.join(source)}\t{' '.join(target)}"
            if tag:
                line += f"\t{tag}"
            f.write(line + '\n')
