"""Corpus-level BLEU, ambiguous-word accuracy, and the experiment harnesses.

BLEU follows the multi-bleu convention: modified (clipped) n-gram
precisions for n = 1..4 aggregated over the whole corpus, a brevity
penalty for short output, case-sensitive exact token matching, and no
smoothing (any zero precision zeroes the score).  Scores are kept in
[0, 1] internally and scaled by 100 in reports.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

MAX_ORDER = 4


@dataclass
class BleuReport:
    precisions: tuple  # p1..p4
    brevity_penalty: float
    bleu: float
    hyp_len: int
    ref_len: int

    def __str__(self):
        ps = "/".join(f"{p:.4f}" for p in self.precisions)
        return (
            f"BLEU = {100.0 * self.bleu:.2f}  (p1..p4 = {ps},"
            f" BP = {self.brevity_penalty:.4f}, hyp/ref = {self.hyp_len}/{self.ref_len})"
        )


def _tokens(seq):
    return seq.split() if isinstance(seq, str) else list(seq)


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(hypotheses, references):
    """Corpus-level BLEU of hypothesis segments against single references.

    Counts are summed over all segments before taking ratios, so the
    score is invariant to segment order.
    """
    hypotheses = list(hypotheses)
    references = list(references)
    if len(hypotheses) != len(references):
        raise ValueError(
            f"hypothesis count {len(hypotheses)} != reference count {len(references)}"
        )
    if not hypotheses:
        raise ValueError("nothing to score")
    matches = [0] * MAX_ORDER
    totals = [0] * MAX_ORDER
    hyp_len = 0
    ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        h = _tokens(hyp)
        r = _tokens(ref)
        hyp_len += len(h)
        ref_len += len(r)
        for n in range(1, MAX_ORDER + 1):
            hc = _ngrams(h, n)
            rc = _ngrams(r, n)
            totals[n - 1] += sum(hc.values())
            matches[n - 1] += sum(min(c, rc[g]) for g, c in hc.items())
    precisions = tuple(
        (m / t) if t > 0 else 0.0 for m, t in zip(matches, totals)
    )
    if hyp_len == 0:
        return BleuReport(precisions, 0.0, 0.0, 0, ref_len)
    bp = 1.0 if hyp_len >= ref_len else float(np.exp(1.0 - ref_len / hyp_len))
    if any(p == 0.0 for p in precisions):
        score = 0.0
    else:
        score = bp * float(np.exp(np.mean([np.log(p) for p in precisions])))
    return BleuReport(precisions, bp, score, hyp_len, ref_len)


def ambiguous_accuracy(hypotheses, references, lexicon, domains):
    """Fraction of ambiguous-word occurrences translated with the
    domain-correct target variant.

    ``lexicon`` maps an ambiguous source word to {domain surface:
    expected target variant}; ``domains`` gives each sentence's true
    domain.  Occurrences are located through the references (which, being
    domain-correct, contain the expected variant wherever the source
    contained the ambiguous word) and checked against the hypothesis by
    bag-of-words containment.
    """
    if not lexicon:
        raise ValueError("empty ambiguous lexicon")
    hypotheses = list(hypotheses)
    references = list(references)
    domains = list(domains)
    if not len(hypotheses) == len(references) == len(domains):
        raise ValueError("hypotheses, references and domains must align")
    total = 0
    hits = 0
    for hyp, ref, dom in zip(hypotheses, references, domains):
        h = Counter(_tokens(hyp))
        r = Counter(_tokens(ref))
        for variants in lexicon.values():
            expected = variants[dom]
            occ = r[expected]
            if occ:
                total += occ
                hits += min(occ, h[expected])
    return hits / total if total else 0.0


# ---------------------------------------------------------------------------
# Experiment harnesses


@dataclass
class ExperimentTable:
    domains: list  # row order
    columns: list  # e.g. ["single", "join", "feature:oracle", "feature:rnn"]
    bleu_scores: dict  # column -> {domain -> float in [0, 1]}
    ambiguous: dict = None  # same layout, or None when no lexicon was given
    classifier_acc: dict = None  # domain -> float, present under an rnn condition

    def to_tsv(self, metric="bleu"):
        grid = self.bleu_scores if metric == "bleu" else self.ambiguous
        if grid is None:
            raise ValueError(f"no {metric} values in this table")
        header = ["domain"] + list(self.columns)
        if self.classifier_acc is not None:
            header.append("cls_acc")
        lines = ["\t".join(header)]
        for d in self.domains:
            row = [d]
            for col in self.columns:
                val = grid[col][d]
                row.append(f"{100.0 * val:.2f}")
            if self.classifier_acc is not None:
                row.append(f"{100.0 * self.classifier_acc[d]:.2f}")
            lines.append("\t".join(row))
        return "\n".join(lines) + "\n"


def _translate_set(translator, rows, domain=None, predictor=None):
    return [translator.translate(src, domain=domain, predictor=predictor) for src, _ in rows]


def run_experiment(test_sets, systems, conditions=("oracle",), classifier=None, lexicon=None):
    """Per-domain BLEU for every requested configuration.

    ``test_sets`` maps a domain tag surface to (source, reference) raw
    text rows.  ``systems`` maps configuration names to translators:
    "single" takes a {domain: translator} dict, the others a single
    translator.  Domain-controlled configurations are evaluated under the
    requested ``conditions``: "oracle" uses the test set's true tag, "rnn"
    the per-sentence classifier prediction (requires ``classifier``).
    A missing model for any requested cell is a configuration error.
    """
    domains = list(test_sets)
    if not domains:
        raise ValueError("no test sets given")
    conditions = list(conditions)
    for cond in conditions:
        if cond not in ("oracle", "rnn"):
            raise ValueError(f"unknown condition {cond!r}")
    uses_rnn = "rnn" in conditions and any(m in systems for m in ("token", "feature"))
    if uses_rnn and classifier is None:
        raise ValueError("the rnn condition requires a classifier")

    columns = []
    cells = []  # (column, domain -> (translator, oracle_domain_or_None, predictor))
    for name in ("single", "join", "token", "feature"):
        if name not in systems:
            continue
        if name == "single":
            per_domain = systems[name]
            for d in domains:
                if d not in per_domain:
                    raise ValueError(f"missing model for cell single/{d}")
            columns.append("single")
            cells.append(("single", {d: (per_domain[d], None, None) for d in domains}))
        elif name == "join":
            columns.append("join")
            cells.append(("join", {d: (systems[name], None, None) for d in domains}))
        else:
            for cond in conditions:
                col = f"{name}:{cond}"
                columns.append(col)
                if cond == "oracle":
                    cells.append((col, {d: (systems[name], d, None) for d in domains}))
                else:
                    cells.append((col, {d: (systems[name], None, classifier) for d in domains}))

    bleu_scores = {col: {} for col, _ in cells}
    amb = {col: {} for col, _ in cells} if lexicon else None
    for col, plan in cells:
        for d in domains:
            translator, oracle_dom, predictor = plan[d]
            rows = test_sets[d]
            hyps = _translate_set(translator, rows, domain=oracle_dom, predictor=predictor)
            refs = [ref for _, ref in rows]
            bleu_scores[col][d] = bleu(hyps, refs).bleu
            if lexicon:
                amb[col][d] = ambiguous_accuracy(hyps, refs, lexicon, [d] * len(rows))

    cls_acc = None
    if uses_rnn:
        cls_acc = {}
        for d in domains:
            preds = [classifier.predict(src) for src, _ in test_sets[d]]
            cls_acc[d] = sum(p == d for p in preds) / len(preds)
    return ExperimentTable(domains, columns, bleu_scores, amb, cls_acc)


@dataclass
class CrossDomainMatrix:
    """Row = test-set domain, column = tag supplied at translation time."""

    domains: list
    bleu_grid: np.ndarray  # (K, K) in [0, 1]
    ambiguous_grid: np.ndarray = None

    def to_tsv(self):
        lines = ["row_domain\tcol_tag\tbleu"]
        for i, row_d in enumerate(self.domains):
            for j, col_d in enumerate(self.domains):
                lines.append(f"{row_d}\t{col_d}\t{100.0 * self.bleu_grid[i, j]:.2f}")
        return "\n".join(lines) + "\n"

    def diagonal_dominant(self):
        """True when every row's maximum sits on the diagonal."""
        return all(
            np.argmax(self.bleu_grid[i]) == i for i in range(len(self.domains))
        )


def cross_domain_matrix(translator, test_sets, lexicon=None):
    """Translate every domain's test set under every tag (feature mode only)."""
    if translator.config.mode != "feature":
        raise ValueError("the cross-domain matrix requires a feature-mode model")
    domains = list(test_sets)
    K = len(domains)
    grid = np.zeros((K, K))
    amb = np.zeros((K, K)) if lexicon else None
    for i, test_d in enumerate(domains):
        rows = test_sets[test_d]
        refs = [ref for _, ref in rows]
        for j, tag_d in enumerate(domains):
            hyps = _translate_set(translator, rows, domain=tag_d)
            grid[i, j] = bleu(hyps, refs).bleu
            if lexicon:
                amb[i, j] = ambiguous_accuracy(hyps, refs, lexicon, [test_d] * len(rows))
    return CrossDomainMatrix(domains, grid, amb)
