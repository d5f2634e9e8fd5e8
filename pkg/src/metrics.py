from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd
from sacrebleu.metrics import BLEU

from .errors import ContractError
from .models import PAD, EvalReport
from .utils import write_lines

_BLEU = BLEU(tokenize='none', smooth_method='none', max_ngram_order=4)


def token_matches(predictions: np.ndarray, gold: np.ndarray) -> Tuple[int, int]:
    """(matched, counted) over non-pad gold positions of teacher-forced predictions."""
    if np.shape(predictions) != np.shape(gold):
        raise ContractError(f"predictions {np.shape(predictions)} and gold {np.shape(gold)} differ in shape")
    counted = gold != PAD
    return int(np.sum((predictions == gold) & counted)), int(np.sum(counted))


def exact_match(hypotheses: Sequence[Sequence], references: Sequence[Sequence]) -> float:
    if not references:
        raise ContractError("exact match needs at least one reference")
    return sum(1 for h, r in zip(hypotheses, references) if list(h) == list(r)) / len(references)


def corpus_bleu(hypotheses: Sequence[Sequence], references: Sequence[Sequence]) -> float:
    """
    Corpus BLEU-4 in [0, 1]: uniform weights, brevity penalty, no smoothing.
    Tokens may be strings or ids; they are compared as whitespace-joined text.
    """
    if not references or len(hypotheses) != len(references):
        raise ContractError("BLEU needs one hypothesis per reference and at least one pair")
    hyps = [' '.join(str(t) for t in h) for h in hypotheses]
    refs = [' '.join(str(t) for t in r) for r in references]
    score = _BLEU.corpus_score(hyps, [refs]).score / 100.0
    return float(min(max(score, 0.0), 1.0))


def spearman(xs: Sequence[float], ys: Sequence[float]) -> float:
    return float(pd.Series(list(xs), dtype=float).corr(pd.Series(list(ys), dtype=float),
                                                        method='spearman'))


def export_report(report: EvalReport, filepath: str = "results/metrics.txt"):
    write_lines(report.to_lines(), filepath)


def load_report(filepath: str) -> EvalReport:
    with open(filepath, 'r', encoding='utf-8') as f:
        return EvalReport.from_lines(f.read().splitlines())


def export_table(rows: List[Dict], filepath: str) -> pd.DataFrame:
    frame = pd.DataFrame(rows)
    Path(filepath).parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(filepath, index=False)
    return frame


def print_metrics_summary(report: EvalReport):
    print("\n" + "=" * 60)
    print(f"EVALUATION ({report.split}, {report.n_pairs} pairs)")
    print("=" * 60)
    print(f"  Token acc  : {report.token_accuracy:.4f}")
    print(f"  Exact match: {report.exact_match:.4f}")
    print(f"  BLEU-4     : {report.bleu:.4f}")
    silhouette = "n/a" if report.silhouette is None else f"{report.silhouette:.4f}"
    print(f"  Silhouette : {silhouette}")
    print()
    for cluster, count in enumerate(report.cluster_counts):
        print(f"  Q{cluster + 1:<3d} {count:6d} pairs")
    print("=" * 60)
