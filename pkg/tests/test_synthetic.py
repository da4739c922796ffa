import json

import pytest

from dcnmt.evaluation import ambiguous_accuracy
from dcnmt.synthetic import CorpusSpec, SyntheticCorpus, generate, load_lexicon
from dcnmt.text import read_labeled_corpus

DOMAINS = ("@MED@", "@IT@", "@LEGAL@")


def small_spec(**kw):
    defaults = dict(domains=DOMAINS, shared_vocab_size=30, domain_vocab_size=20,
                    sentences_per_domain=120, num_ambiguous=6, seed=5)
    defaults.update(kw)
    return CorpusSpec(**defaults)


def test_generate_deterministic_byte_identical(tmp_path):
    a = generate(small_spec())
    b = generate(small_spec())
    assert a.train == b.train
    assert a.test == b.test
    assert a.lexicon == b.lexicon
    da, db = tmp_path / "a", tmp_path / "b"
    a.write(da)
    b.write(db)
    for name in ("train.tsv", "test.tsv", "lexicon.json"):
        assert (da / name).read_bytes() == (db / name).read_bytes()


def test_generate_split_sizes_and_disjointness():
    corpus = generate(small_spec())
    assert len(corpus.train) + len(corpus.test) == 3 * 120
    assert len(corpus.test) == 3 * 12  # 10% per domain
    train_srcs = {src for _, src, _ in corpus.train}
    test_srcs = {src for _, src, _ in corpus.test}
    assert not train_srcs & test_srcs


def test_generate_single_domain_degenerates():
    corpus = generate(small_spec(domains=("@ONLY@",), num_ambiguous=3))
    assert corpus.domains == ("@ONLY@",)
    for word, variants in corpus.lexicon.items():
        assert list(variants) == ["@ONLY@"]


def test_sentence_lengths_in_range():
    spec = small_spec(len_range=(4, 9))
    corpus = generate(spec)
    for _, src, tgt in corpus.train + corpus.test:
        n = len(src.split())
        assert 4 <= n <= 9
        assert len(tgt.split()) == n  # word-by-word mapping


def test_every_sentence_contains_a_domain_word_and_is_separable():
    spec = small_spec()
    corpus = generate(spec)
    # reconstruct each domain's source vocabulary from the word map
    per_domain_words = {d: set() for d in DOMAINS}
    all_rows = corpus.train + corpus.test
    shared_and_amb = set(corpus.lexicon)
    for dom, src, _ in all_rows:
        per_domain_words[dom].update(src.split())
    only = {d: per_domain_words[d] - set.union(*(per_domain_words[o] for o in DOMAINS if o != d))
            for d in DOMAINS}
    for dom, src, _ in all_rows:
        toks = set(src.split())
        assert toks & only[dom], f"sentence lacks a domain-identifying word: {src}"


def test_ambiguous_occurrence_rate_near_half():
    spec = small_spec(sentences_per_domain=2000, seed=20)
    corpus = generate(spec)
    amb = set(corpus.lexicon)
    rows = corpus.train + corpus.test
    for d in DOMAINS:
        count = sum(1 for dom, src, _ in rows if dom == d and set(src.split()) & amb)
        assert abs(count - 1000) <= 50  # within 5% of the binomial mean


def test_target_variant_is_deterministic_ground_truth():
    corpus = generate(small_spec())
    for dom, src, tgt in corpus.train + corpus.test:
        stoks, ttoks = src.split(), tgt.split()
        for s, t in zip(stoks, ttoks):
            if s in corpus.lexicon:
                assert t == corpus.lexicon[s][dom]
    # references therefore score 1.0 against themselves
    rows = corpus.test
    hyps = [t for _, _, t in rows]
    doms = [d for d, _, _ in rows]
    assert ambiguous_accuracy(hyps, hyps, corpus.lexicon, doms) == 1.0


def test_lexicon_variants_distinct_per_domain():
    corpus = generate(small_spec())
    for word, variants in corpus.lexicon.items():
        assert set(variants) == set(DOMAINS)
        assert len(set(variants.values())) == len(DOMAINS)


def test_explicit_lexicon_is_respected():
    lex = {
        "administer": {"@MED@": "administrer", "@IT@": "executer", "@LEGAL@": "gerer"},
    }
    corpus = generate(small_spec(ambiguous_lexicon=lex))
    assert corpus.lexicon == lex


def test_explicit_lexicon_validation():
    with pytest.raises(ValueError):
        CorpusSpec(domains=DOMAINS, ambiguous_lexicon={"w": {"@MED@": "x"}})
    with pytest.raises(ValueError):
        CorpusSpec(domains=DOMAINS,
                   ambiguous_lexicon={"w": {"@MED@": "x", "@IT@": "x", "@LEGAL@": "x"}})


def test_spec_validation():
    with pytest.raises(ValueError):
        CorpusSpec(domains=())
    with pytest.raises(ValueError):
        CorpusSpec(domains=DOMAINS, len_range=(5, 3))
    with pytest.raises(ValueError):
        CorpusSpec(domains=DOMAINS, sentences_per_domain=0)


def test_write_emits_labeled_tsv_and_sidecar(tmp_path):
    corpus = generate(small_spec())
    corpus.write(tmp_path)
    rows = read_labeled_corpus(tmp_path / "train.tsv")
    assert rows == corpus.train
    with open(tmp_path / "lexicon.json", encoding="utf-8") as f:
        sidecar = json.load(f)
    assert sidecar["domains"] == list(DOMAINS)
    assert sidecar["lexicon"] == corpus.lexicon
    lex, doms = load_lexicon(tmp_path / "lexicon.json")
    assert lex == corpus.lexicon and doms == list(DOMAINS)


def test_test_sets_grouping():
    corpus = generate(small_spec())
    sets = corpus.test_sets()
    assert set(sets) == set(DOMAINS)
    assert sum(len(v) for v in sets.values()) == len(corpus.test)
    for d, rows in sets.items():
        for src, ref in rows:
            assert (d, src, ref) in corpus.test
