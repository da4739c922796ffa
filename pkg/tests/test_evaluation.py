import math
from collections import Counter

import numpy as np
import pytest

from dcnmt.evaluation import (
    BleuReport,
    CrossDomainMatrix,
    ambiguous_accuracy,
    bleu,
    cross_domain_matrix,
    run_experiment,
)


def _oracle_counts(hyp_tokens, ref_tokens, n):
    """Independent clipped n-gram counting for cross-checking bleu()."""
    hyp_ngrams = Counter(tuple(hyp_tokens[i : i + n]) for i in range(len(hyp_tokens) - n + 1))
    ref_ngrams = Counter(tuple(ref_tokens[i : i + n]) for i in range(len(ref_tokens) - n + 1))
    match = sum(min(c, ref_ngrams[g]) for g, c in hyp_ngrams.items())
    return match, sum(hyp_ngrams.values())


# ---------------------------------------------------------------------------
# bleu


def test_bleu_identity_is_one():
    report = bleu(["the quick brown fox jumps"], ["the quick brown fox jumps"])
    assert report.bleu == 1.0
    assert report.precisions == (1.0, 1.0, 1.0, 1.0)
    assert report.brevity_penalty == 1.0


def test_bleu_hand_example_last_token_differs():
    # 6-token pair differing only in the final token: clipped counts are
    # 5/6, 4/5, 3/4, 2/3 and the geometric mean gives (1/3)^(1/4)
    hyp = "the cat sat on the mat"
    ref = "the cat sat on the hat"
    report = bleu([hyp], [ref])
    expected_p = (5 / 6, 4 / 5, 3 / 4, 2 / 3)
    for got, want, n in zip(report.precisions, expected_p, range(1, 5)):
        m, t = _oracle_counts(hyp.split(), ref.split(), n)
        assert abs(got - want) < 1e-12
        assert got == m / t  # independent counting agrees
    assert report.brevity_penalty == 1.0
    assert abs(report.bleu - (1.0 / 3.0) ** 0.25) < 1e-6
    assert abs(report.bleu - 0.7598) < 5e-4


def test_bleu_spec_literal_pair_counts():
    # the same hypothesis against "a mat": clipped counts drop to
    # 5/6, 3/5, 2/4, 1/3 (verified by the oracle counter)
    hyp = "the cat sat on the mat"
    ref = "the cat sat on a mat"
    report = bleu([hyp], [ref])
    for n in range(1, 5):
        m, t = _oracle_counts(hyp.split(), ref.split(), n)
        assert report.precisions[n - 1] == m / t
    assert report.precisions == (5 / 6, 3 / 5, 2 / 4, 1 / 3)


def test_bleu_clipping_zeroes_score():
    report = bleu(["the the the the"], ["the cat"])
    assert report.precisions[0] == 1 / 4  # "the" clipped to one match
    assert report.precisions[1] == 0.0
    assert report.bleu == 0.0


def test_bleu_brevity_penalty():
    # hypothesis shorter than reference: BP = exp(1 - ref/hyp)
    report = bleu(["a b c d"], ["a b c d e f g h"])
    assert abs(report.brevity_penalty - math.exp(1.0 - 8.0 / 4.0)) < 1e-12
    assert report.brevity_penalty < 1.0
    long_report = bleu(["a b c d e f g h"], ["a b c d"])
    assert long_report.brevity_penalty == 1.0


def test_bleu_count_mismatch_error():
    with pytest.raises(ValueError):
        bleu(["a"], ["a", "b"])


def test_bleu_all_empty_hypotheses():
    report = bleu([""], ["a b c"])
    assert report.bleu == 0.0
    assert report.hyp_len == 0


def test_bleu_corpus_counts_are_summed_and_permutation_invariant():
    hyps = ["the cat sat on the mat", "a quick brown fox jumps over", "hello world say I"]
    refs = ["the cat sat on the hat", "a quick brown dog jumps over", "hello world say I"]
    a = bleu(hyps, refs)
    b = bleu(hyps[::-1], refs[::-1])
    assert a.bleu == b.bleu
    assert a.precisions == b.precisions
    # corpus counts equal the sum of per-segment oracle counts
    for n in range(1, 5):
        m = t = 0
        for h, r in zip(hyps, refs):
            dm, dt = _oracle_counts(h.split(), r.split(), n)
            m += dm
            t += dt
        assert a.precisions[n - 1] == (m / t if t else 0.0)


def test_bleu_score_bounds():
    rng = np.random.default_rng(4)
    words = [f"w{i}" for i in range(12)]
    for _ in range(30):
        hyps = [" ".join(words[int(i)] for i in rng.integers(0, 12, 6)) for _ in range(4)]
        refs = [" ".join(words[int(i)] for i in rng.integers(0, 12, 6)) for _ in range(4)]
        rep = bleu(hyps, refs)
        assert 0.0 <= rep.bleu <= 1.0
        assert rep.brevity_penalty <= 1.0


def test_bleu_token_lists_accepted():
    assert bleu([["a", "b", "c", "d"]], [["a", "b", "c", "d"]]).bleu == 1.0


# ---------------------------------------------------------------------------
# ambiguous accuracy


LEX = {"administer": {"@MED@": "administrer", "@POL@": "gerer"}}


def test_ambiguous_accuracy_identity():
    refs = ["il faut administrer la dose", "gerer le budget national"]
    domains = ["@MED@", "@POL@"]
    assert ambiguous_accuracy(refs, refs, LEX, domains) == 1.0


def test_ambiguous_accuracy_wrong_variants():
    refs = ["il faut administrer la dose", "gerer le budget national"]
    hyps = ["il faut gerer la dose", "administrer le budget national"]
    assert ambiguous_accuracy(hyps, refs, LEX, ["@MED@", "@POL@"]) == 0.0


def test_ambiguous_accuracy_partial():
    refs = ["administrer la dose", "gerer le budget"]
    hyps = ["administrer la dose", "le budget national"]
    assert ambiguous_accuracy(hyps, refs, LEX, ["@MED@", "@POL@"]) == 0.5


def test_ambiguous_accuracy_ignores_sentences_without_occurrences():
    refs = ["rien ici", "administrer la dose"]
    hyps = ["autre chose", "administrer la dose"]
    assert ambiguous_accuracy(hyps, refs, LEX, ["@MED@", "@MED@"]) == 1.0


def test_ambiguous_accuracy_empty_lexicon_error():
    with pytest.raises(ValueError):
        ambiguous_accuracy(["a"], ["a"], {}, ["@MED@"])


# ---------------------------------------------------------------------------
# experiment harnesses (with stub translators)


class StubTranslator:
    """Echoes a fixed mapping; domain-aware when given variants."""

    def __init__(self, table, mode="feature"):
        self.table = table
        self.config = type("C", (), {"mode": mode})()

    def translate(self, text, domain=None, predictor=None):
        if predictor is not None and domain is None:
            domain = predictor.predict(text)
        return self.table(text, domain)


class StubPredictor:
    def __init__(self, fn):
        self.fn = fn

    def predict(self, text):
        return self.fn(text)


def test_run_experiment_degenerate_single_cell():
    tests = {"@A@": [("src one two three four", "ref one two three four")]}
    echo = StubTranslator(lambda s, d: "ref one two three four", mode="join")
    table = run_experiment(tests, {"join": echo})
    assert table.columns == ["join"]
    assert table.bleu_scores["join"]["@A@"] == 1.0
    tsv = table.to_tsv()
    assert tsv.splitlines()[0] == "domain\tjoin"


def test_run_experiment_oracle_equals_rnn_with_perfect_classifier():
    domains = ["@A@", "@B@"]
    tests = {d: [(f"src {d} {i}", f"ref {d} {i}") for i in range(3)] for d in domains}

    def table_fn(text, domain):
        return text.replace("src", "ref") if domain in domains else "wrong"

    feature = StubTranslator(table_fn)
    perfect = StubPredictor(lambda text: text.split()[1])
    table = run_experiment(tests, {"feature": feature}, conditions=("oracle", "rnn"),
                           classifier=perfect)
    for d in domains:
        assert table.bleu_scores["feature:oracle"][d] == table.bleu_scores["feature:rnn"][d]
        assert table.classifier_acc[d] == 1.0


def test_run_experiment_missing_single_model_cell():
    tests = {"@A@": [("s", "r")], "@B@": [("s", "r")]}
    with pytest.raises(ValueError) as err:
        run_experiment(tests, {"single": {"@A@": StubTranslator(lambda s, d: s)}})
    assert "single/@B@" in str(err.value)


def test_run_experiment_rnn_requires_classifier():
    tests = {"@A@": [("s", "r")]}
    with pytest.raises(ValueError):
        run_experiment(tests, {"feature": StubTranslator(lambda s, d: s)},
                       conditions=("rnn",))


def test_cross_domain_matrix_requires_feature_mode():
    tests = {"@A@": [("s", "r")]}
    with pytest.raises(ValueError):
        cross_domain_matrix(StubTranslator(lambda s, d: s, mode="join"), tests)


def test_cross_domain_matrix_single_domain_equals_plain_eval():
    tests = {"@A@": [("x y z w", "x y z w")]}
    tr = StubTranslator(lambda s, d: s)
    matrix = cross_domain_matrix(tr, tests)
    assert matrix.bleu_grid.shape == (1, 1)
    assert matrix.bleu_grid[0, 0] == bleu(["x y z w"], ["x y z w"]).bleu


def test_cross_domain_matrix_diagonal_structure():
    domains = ["@A@", "@B@"]
    lex = {"amb": {"@A@": "va", "@B@": "vb"}}
    tests = {d: [(f"amb junk", f"{lex['amb'][d]} junk")] for d in domains}

    def table_fn(text, domain):
        return text.replace("amb", lex["amb"][domain])

    matrix = cross_domain_matrix(StubTranslator(table_fn), tests, lexicon=lex)
    assert matrix.diagonal_dominant()
    assert matrix.ambiguous_grid[0, 0] == 1.0
    assert matrix.ambiguous_grid[0, 1] == 0.0
    tsv = matrix.to_tsv()
    assert tsv.splitlines()[0] == "row_domain\tcol_tag\tbleu"
    assert len(tsv.strip().splitlines()) == 1 + 4
