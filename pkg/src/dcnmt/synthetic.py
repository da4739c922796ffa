"""Deterministic multi-domain toy parallel corpora with controlled ambiguity.

Every sentence mixes shared-vocabulary words with exactly one
domain-specific word (which makes the domain perfectly recoverable) and,
with probability 0.5, exactly one ambiguous word whose correct target
variant depends on the domain.  Targets are produced by a deterministic
word-by-word mapping, so the ambiguous lexicon doubles as evaluation
ground truth.  All words are random letter strings with no systematic
structure, which keeps the domain signal limited to word identity.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

from .numeric import make_rng
from .text import write_labeled_corpus

_LETTERS = "abcdefghijklmnopqrstuvwxyz"


@dataclass
class CorpusSpec:
    domains: tuple  # tag surfaces, e.g. ("@MED@", "@IT@", "@LEGAL@")
    shared_vocab_size: int = 80
    domain_vocab_size: int = 120
    sentences_per_domain: int = 2000
    len_range: tuple = (4, 9)
    seed: int = 1
    num_ambiguous: int = 12
    ambiguous_lexicon: dict = None  # src word -> {domain surface: target variant}

    AMBIGUOUS_PROB = 0.5  # fixed per-sentence inclusion probability
    TRAIN_FRACTION = 0.9

    def __post_init__(self):
        self.domains = tuple(self.domains)
        if not self.domains:
            raise ValueError("at least one domain is required")
        if self.shared_vocab_size < 1 or self.domain_vocab_size < 1:
            raise ValueError("vocabulary sizes must be positive")
        if self.sentences_per_domain < 1:
            raise ValueError("sentences_per_domain must be positive")
        lo, hi = self.len_range
        if not 1 <= lo <= hi:
            raise ValueError(f"bad sentence length range {self.len_range}")
        if self.ambiguous_lexicon is not None:
            for word, variants in self.ambiguous_lexicon.items():
                if set(variants) != set(self.domains):
                    raise ValueError(f"ambiguous word {word!r} must map every domain")
                if len(set(variants.values())) != len(self.domains):
                    raise ValueError(f"ambiguous word {word!r} needs distinct variants")
        elif self.num_ambiguous < 1:
            raise ValueError("num_ambiguous must be positive")


@dataclass
class SyntheticCorpus:
    train: list  # (domain surface, src text, tgt text)
    test: list
    lexicon: dict
    domains: tuple
    word_map: dict = field(repr=False, default=None)

    def write(self, outdir):
        """Emit train.tsv / test.tsv plus the lexicon sidecar."""
        os.makedirs(outdir, exist_ok=True)
        write_labeled_corpus(os.path.join(outdir, "train.tsv"), self.train)
        write_labeled_corpus(os.path.join(outdir, "test.tsv"), self.test)
        sidecar = {"domains": list(self.domains), "lexicon": self.lexicon}
        with open(os.path.join(outdir, "lexicon.json"), "w", encoding="utf-8") as f:
            json.dump(sidecar, f, indent=2, sort_keys=True)
            f.write("\n")

    def test_sets(self):
        """Test rows grouped per domain as {domain: [(src, ref)]}."""
        out = {d: [] for d in self.domains}
        for dom, src, tgt in self.test:
            out[dom].append((src, tgt))
        return out


def load_lexicon(path):
    with open(path, encoding="utf-8") as f:
        sidecar = json.load(f)
    return sidecar["lexicon"], sidecar["domains"]


def _new_word(rng, taken):
    while True:
        n = int(rng.integers(4, 9))
        w = "".join(_LETTERS[int(i)] for i in rng.integers(0, len(_LETTERS), n))
        if w not in taken:
            taken.add(w)
            return w


def generate(spec):
    """Build the corpus described by ``spec``; byte-identical for equal seeds."""
    rng = make_rng(spec.seed)
    taken = set()
    K = len(spec.domains)

    shared_src = [_new_word(rng, taken) for _ in range(spec.shared_vocab_size)]
    domain_src = {
        d: [_new_word(rng, taken) for _ in range(spec.domain_vocab_size)]
        for d in spec.domains
    }
    if spec.ambiguous_lexicon is None:
        lexicon = {}
        for _ in range(spec.num_ambiguous):
            word = _new_word(rng, taken)
            lexicon[word] = {d: _new_word(rng, taken) for d in spec.domains}
    else:
        lexicon = {w: dict(v) for w, v in spec.ambiguous_lexicon.items()}
        for w, variants in lexicon.items():
            taken.add(w)
            taken.update(variants.values())
    amb_words = list(lexicon)

    word_map = {}
    for w in shared_src:
        word_map[w] = _new_word(rng, taken)
    for d in spec.domains:
        for w in domain_src[d]:
            word_map[w] = _new_word(rng, taken)

    lo, hi = spec.len_range
    train = []
    test = []
    for d in spec.domains:
        seen_src = set()
        sentences = []
        while len(sentences) < spec.sentences_per_domain:
            L = int(rng.integers(lo, hi + 1))
            include_amb = bool(rng.random() < spec.AMBIGUOUS_PROB)
            if include_amb and L < 2:
                L = 2
            positions = rng.permutation(L)
            dpos = int(positions[0])
            apos = int(positions[1]) if include_amb else -1
            toks = []
            for i in range(L):
                if i == dpos:
                    toks.append(domain_src[d][int(rng.integers(len(domain_src[d])))])
                elif i == apos:
                    toks.append(amb_words[int(rng.integers(len(amb_words)))])
                else:
                    toks.append(shared_src[int(rng.integers(len(shared_src)))])
            src = " ".join(toks)
            if src in seen_src:
                continue
            seen_src.add(src)
            tgt = " ".join(
                lexicon[t][d] if t in lexicon else word_map[t] for t in toks
            )
            sentences.append((d, src, tgt))
        order = rng.permutation(len(sentences))
        n_test = max(1, round((1.0 - spec.TRAIN_FRACTION) * len(sentences)))
        test_idx = set(int(i) for i in order[:n_test])
        for i, row in enumerate(sentences):
            (test if i in test_idx else train).append(row)
    return SyntheticCorpus(train, test, lexicon, spec.domains, word_map)
