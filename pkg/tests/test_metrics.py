"""Tests for the evaluation metrics and report files."""

import math
import sys
from pathlib import Path
sys.path.insert(0, str(Path(__file__).parent.parent))

import numpy as np
import pytest

from src.errors import ContractError
from src.metrics import (
    corpus_bleu, exact_match, export_report, export_table, load_report, spearman,
    token_matches,
)
from src.models import PAD, EvalReport


class TestTokenMatches:

    def test_skips_padding(self):
        predictions = np.array([[4, 5, 9], [6, 0, 0]])
        gold = np.array([[4, 7, 2], [6, 2, PAD]])
        assert token_matches(predictions, gold) == (2, 5)

    def test_all_padding(self):
        assert token_matches(np.array([[4, 5]]), np.full((1, 2), PAD)) == (0, 0)

    @pytest.mark.parametrize("seed", range(50))
    def test_matches_loop_oracle(self, seed):
        rng = np.random.default_rng(seed)
        rows, cols = int(rng.integers(1, 6)), int(rng.integers(1, 9))
        predictions = rng.integers(0, 8, size=(rows, cols))
        gold = rng.integers(0, 8, size=(rows, cols))
        matched = counted = 0
        for r in range(rows):
            for c in range(cols):
                if gold[r, c] == PAD:
                    continue
                counted += 1
                matched += int(predictions[r, c] == gold[r, c])
        assert token_matches(predictions, gold) == (matched, counted)

    def test_shape_mismatch(self):
        with pytest.raises(ContractError):
            token_matches(np.zeros((2, 3)), np.zeros((2, 4)))


class TestExactMatch:

    def test_fraction(self):
        assert exact_match([[1, 2], [3]], [[1, 2], [4]]) == 0.5

    def test_empty(self):
        with pytest.raises(ContractError):
            exact_match([], [])


class TestBleu:

    def test_perfect(self):
        assert corpus_bleu([['a', 'b', 'c', 'd']], [['a', 'b', 'c', 'd']]) == pytest.approx(1.0)

    def test_partial_matches(self):
        hyp = ['a', 'b', 'c', 'd', 'e']
        ref = ['a', 'b', 'c', 'd', 'f']
        # precisions 4/5, 3/4, 2/3, 1/2 and no brevity penalty
        assert corpus_bleu([hyp], [ref]) == pytest.approx(0.2 ** 0.25, abs=1e-6)

    def test_brevity_penalty(self):
        ref = ['a', 'b', 'c', 'd', 'e', 'f', 'g', 'h']
        assert corpus_bleu([list(ref)], [ref]) == pytest.approx(1.0)
        short = ['a', 'b', 'c', 'd', 'e', 'f']
        # all n-gram precisions are 1; BP = exp(1 - 8/6)
        assert corpus_bleu([short], [ref]) == pytest.approx(math.exp(1 - 8 / 6), abs=1e-6)

    def test_no_four_gram_match(self):
        assert corpus_bleu([['a', 'b', 'x', 'c']], [['a', 'b', 'y', 'c']]) == 0.0

    def test_integer_tokens(self):
        assert corpus_bleu([[4, 5, 6, 7]], [[4, 5, 6, 7]]) == pytest.approx(1.0)

    def test_length_mismatch(self):
        with pytest.raises(ContractError):
            corpus_bleu([['a']], [])


class TestSpearman:

    def test_monotone(self):
        assert spearman([1, 2, 3, 4], [10, 20, 25, 100]) == pytest.approx(1.0)

    def test_reversed(self):
        assert spearman([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)


class TestReportFiles:

    def test_round_trip(self, tmp_path):
        report = EvalReport(0.75, 0.5, 0.25, [3, 0], None, 3, 'test')
        path = str(tmp_path / 'metrics.txt')
        export_report(report, path)
        assert load_report(path) == report
        assert "silhouette: nan" in (tmp_path / 'metrics.txt').read_text(encoding='utf-8')

    def test_export_table(self, tmp_path):
        frame = export_table([{'a': 1, 'b': 2.5}], str(tmp_path / 'sub' / 't.csv'))
        assert list(frame.columns) == ['a', 'b']
        assert (tmp_path / 'sub' / 't.csv').read_text().splitlines()[0] == 'a,b'


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
