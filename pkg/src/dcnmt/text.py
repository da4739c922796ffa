"""Subword segmentation, vocabularies and domain annotations.

Inputs are assumed pre-tokenized: a sentence is a whitespace-separated
token string.  BPE splits words into subwords where every non-final
subword carries the ``@@`` continuation suffix, so joining on ``"@@ "``
inverts segmentation exactly.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

PAD, UNK, BOS, EOS = "<pad>", "<unk>", "<s>", "<eos>"
RESERVED = (PAD, UNK, BOS, EOS)
PAD_ID, UNK_ID, BOS_ID, EOS_ID = 0, 1, 2, 3

CONTINUATION = "@@"
BPE_HEADER = "#version: dc-bpe 1"


class TagCollisionError(ValueError):
    """A domain tag's surface form collides with an ordinary vocabulary word."""


class Vocabulary:
    """Bijection between token strings and dense integer ids.

    Ids 0..3 are reserved for <pad>, <unk>, <s>, <eos>.  Domain tags used
    as source tokens (additional-token mode) are registered through
    ``add_tag`` and tracked separately from ordinary words.
    """

    def __init__(self, tokens=(), tag_symbols=()):
        self._id_to_token = list(RESERVED)
        self._token_to_id = {t: i for i, t in enumerate(RESERVED)}
        for tok in tokens:
            if tok in self._token_to_id:
                raise ValueError(f"duplicate vocabulary token {tok!r}")
            self._token_to_id[tok] = len(self._id_to_token)
            self._id_to_token.append(tok)
        self._tag_symbols = set()
        for surface in tag_symbols:
            if surface not in self._token_to_id:
                raise ValueError(f"tag symbol {surface!r} not among vocabulary tokens")
            self._tag_symbols.add(surface)

    def __len__(self):
        return len(self._id_to_token)

    def __contains__(self, token):
        return token in self._token_to_id

    def __eq__(self, other):
        return (
            isinstance(other, Vocabulary)
            and self._id_to_token == other._id_to_token
            and self._tag_symbols == other._tag_symbols
        )

    def lookup(self, token):
        """Token id, or the <unk> id for out-of-vocabulary tokens."""
        return self._token_to_id.get(token, UNK_ID)

    def get(self, token):
        """Token id, or None if absent (no <unk> fallback)."""
        return self._token_to_id.get(token)

    def token(self, token_id):
        if not 0 <= token_id < len(self._id_to_token):
            raise ValueError(f"token id {token_id} out of range [0, {len(self)})")
        return self._id_to_token[token_id]

    def tokens(self):
        """All entries in id order (reserved symbols included)."""
        return list(self._id_to_token)

    @property
    def tag_symbols(self):
        return frozenset(self._tag_symbols)

    def is_tag(self, token):
        return token in self._tag_symbols

    def add_tag(self, surface):
        """Register a domain tag as an atomic vocabulary symbol.

        Idempotent for already-registered tags; raises TagCollisionError
        if the surface form exists as an ordinary word.
        """
        existing = self._token_to_id.get(surface)
        if existing is not None:
            if surface in self._tag_symbols:
                return existing
            raise TagCollisionError(
                f"domain tag {surface!r} collides with an existing vocabulary word"
            )
        self._token_to_id[surface] = len(self._id_to_token)
        self._id_to_token.append(surface)
        self._tag_symbols.add(surface)
        return self._token_to_id[surface]

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            for i, tok in enumerate(self._id_to_token):
                f.write(f"{tok}\t{i}\n")

    @classmethod
    def load(cls, path, tags=None):
        """Read a ``token<TAB>id`` file; ``tags`` re-marks tag symbols."""
        entries = []
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f):
                line = line.rstrip("\n")
                if not line:
                    continue
                try:
                    tok, ids = line.split("\t")
                    entries.append((tok, int(ids)))
                except ValueError:
                    raise ValueError(f"{path}:{lineno + 1}: malformed vocabulary line {line!r}")
        entries.sort(key=lambda e: e[1])
        if [i for _, i in entries] != list(range(len(entries))):
            raise ValueError(f"{path}: vocabulary ids are not dense from 0")
        toks = [t for t, _ in entries]
        if toks[:4] != list(RESERVED):
            raise ValueError(f"{path}: reserved symbols missing from ids 0..3")
        tag_syms = []
        if tags is not None:
            tag_syms = [s for s in tags.surfaces() if s in set(toks)]
        return cls(tokens=toks[4:], tag_symbols=tag_syms)


class DomainTagSet:
    """Ordered domain tags (surface form ``@NAME@``) with their own id space.

    Ids run 0..K-1 in declaration order.  ``none_id`` (== K) is a reserved
    fallback for untagged sentences; it is not a declared domain and never
    has a surface form.
    """

    def __init__(self, tags):
        tags = tuple(tags)
        if not tags:
            raise ValueError("at least one domain tag is required")
        seen = set()
        for t in tags:
            if len(t) < 3 or not t.startswith("@") or not t.endswith("@"):
                raise ValueError(f"domain tag {t!r} must have the form @NAME@")
            if t in seen:
                raise ValueError(f"duplicate domain tag {t!r}")
            seen.add(t)
        self._tags = tags
        self._ids = {t: i for i, t in enumerate(tags)}

    def __len__(self):
        return len(self._tags)

    def __iter__(self):
        return iter(self._tags)

    def __contains__(self, surface):
        return surface in self._ids

    def __eq__(self, other):
        return isinstance(other, DomainTagSet) and self._tags == other._tags

    def surfaces(self):
        return list(self._tags)

    def tag_id(self, surface):
        try:
            return self._ids[surface]
        except KeyError:
            raise ValueError(f"unknown domain tag {surface!r}") from None

    def surface(self, tag_id):
        if not 0 <= tag_id < len(self._tags):
            raise ValueError(f"domain tag id {tag_id} out of range [0, {len(self._tags)})")
        return self._tags[tag_id]

    @property
    def none_id(self):
        return len(self._tags)

    @property
    def feature_rows(self):
        """Rows of the feature embedding table (declared tags + the none slot)."""
        return len(self._tags) + 1


def check_tag_disjointness(vocab, tags):
    """Assert no tag surface occurs in the vocabulary as an ordinary word."""
    for surface in tags:
        if surface in vocab and not vocab.is_tag(surface):
            raise TagCollisionError(
                f"domain tag {surface!r} occurs in the word vocabulary"
            )


# ---------------------------------------------------------------------------
# Byte-pair encoding


@dataclass
class BpeModel:
    """Ordered merge list; earlier merges were more frequent at learning time."""

    merges: list
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            f.write(BPE_HEADER + "\n")
            for a, b in self.merges:
                f.write(f"{a} {b}\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            header = f.readline().rstrip("\n")
            if header != BPE_HEADER:
                raise ValueError(f"{path}: not a BPE model file (header {header!r})")
            merges = []
            for lineno, line in enumerate(f, start=2):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split(" ")
                if len(parts) != 2:
                    raise ValueError(f"{path}:{lineno}: malformed merge line {line!r}")
                merges.append((parts[0], parts[1]))
        return cls(merges)


def _word_symbols(word):
    chars = list(word)
    return tuple(c + CONTINUATION for c in chars[:-1]) + (chars[-1],)


def _merge_pair(symbols, pair):
    a, b = pair
    out = []
    i = 0
    n = len(symbols)
    while i < n:
        if i < n - 1 and symbols[i] == a and symbols[i + 1] == b:
            out.append(a[: -len(CONTINUATION)] + b)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return tuple(out)


def learn_bpe(corpus, num_merges):
    """Learn merges by repeatedly fusing the most frequent adjacent symbol pair.

    ``corpus`` is an iterable of whitespace-tokenized sentences.  Pair
    counts are recomputed after every merge; ties break by lexicographic
    order of the pair, so learning is fully deterministic.
    """
    if num_merges < 0:
        raise ValueError("num_merges must be non-negative")
    word_freq = Counter()
    for sent in corpus:
        toks = sent.split() if isinstance(sent, str) else list(sent)
        word_freq.update(toks)
    if not word_freq:
        raise ValueError("cannot learn BPE from an empty corpus")
    words = {w: _word_symbols(w) for w in word_freq}
    merges = []
    for _ in range(num_merges):
        pair_counts = Counter()
        for w, syms in words.items():
            freq = word_freq[w]
            for i in range(len(syms) - 1):
                pair_counts[(syms[i], syms[i + 1])] += freq
        if not pair_counts:
            break
        best = min(pair_counts.items(), key=lambda kv: (-kv[1], kv[0]))[0]
        merges.append(best)
        for w, syms in words.items():
            if best[0] in syms:
                words[w] = _merge_pair(syms, best)
    return BpeModel(merges)


def _apply_bpe_word(model, word):
    cached = model._cache.get(word)
    if cached is not None:
        return cached
    syms = _word_symbols(word)
    for pair in model.merges:
        if len(syms) == 1:
            break
        if pair[0] in syms:
            syms = _merge_pair(syms, pair)
    model._cache[word] = syms
    return syms


def apply_bpe(model, sentence):
    """Segment a whitespace-tokenized sentence into subword tokens."""
    toks = sentence.split() if isinstance(sentence, str) else list(sentence)
    out = []
    for w in toks:
        out.extend(_apply_bpe_word(model, w))
    return out


def detokenize(subwords):
    """Invert BPE segmentation by joining on the continuation marker."""
    return " ".join(subwords).replace(CONTINUATION + " ", "")


# ---------------------------------------------------------------------------
# Vocabulary construction and domain annotations


def build_vocab(corpus, max_size):
    """Most frequent tokens (ties lexicographic) under ``max_size`` total ids."""
    if max_size <= 4:
        raise ValueError("max_size must exceed the 4 reserved symbols")
    counts = Counter()
    for sent in corpus:
        toks = sent.split() if isinstance(sent, str) else list(sent)
        counts.update(t for t in toks if t not in RESERVED)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    kept = [tok for tok, _ in ranked[: max_size - 4]]
    return Vocabulary(tokens=kept)


def inject_token(src, tag, tags, vocab=None):
    """Append the domain tag's surface form as the sentence's final token.

    ``tag`` must be registered in ``tags``; when a vocabulary is supplied
    the tag must not exist there as an ordinary word.
    """
    tags.tag_id(tag)  # raises for unregistered tags
    if vocab is not None and tag in vocab and not vocab.is_tag(tag):
        raise TagCollisionError(f"domain tag {tag!r} occurs in the word vocabulary")
    return list(src) + [tag]


def annotate_features(src, tag, tags):
    """Per-token domain annotation: the sentence's tag id at every position."""
    tid = tags.tag_id(tag)
    return [tid] * len(src)


@dataclass
class AnnotatedPair:
    """One training example: source ids, target ids and the domain id."""

    src: list
    tgt: list
    domain: int
    src_features: list = None

    def __post_init__(self):
        if self.src_features is not None and len(self.src_features) != len(self.src):
            raise ValueError(
                f"feature annotation length {len(self.src_features)} != source length {len(self.src)}"
            )


# ---------------------------------------------------------------------------
# Corpus files


def read_text_corpus(path):
    with open(path, encoding="utf-8") as f:
        return [line.rstrip("\n") for line in f]


def write_text_corpus(path, sentences):
    with open(path, "w", encoding="utf-8") as f:
        for s in sentences:
            f.write(s + "\n")


def read_labeled_corpus(path):
    """Read ``domain<TAB>source<TAB>target`` rows."""
    rows = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 tab-separated columns")
            rows.append((parts[0], parts[1], parts[2]))
    return rows


def write_labeled_corpus(path, rows):
    with open(path, "w", encoding="utf-8") as f:
        for domain, src, tgt in rows:
            f.write(f"{domain}\t{src}\t{tgt}\n")


def bpe_labeled_rows(rows, model):
    """Apply BPE to the source and target columns of labeled rows."""
    out = []
    for domain, src, tgt in rows:
        out.append((domain, " ".join(apply_bpe(model, src)), " ".join(apply_bpe(model, tgt))))
    return out


def make_pairs(rows, vocab, tags, mode, inject_tokens=False):
    """Turn labeled (BPE-segmented) text rows into AnnotatedPairs for ``mode``.

    In token mode the tag is expected to be present already (preprocessed
    corpora) unless ``inject_tokens`` is set.  In feature mode every source
    position is annotated with the sentence's domain id.
    """
    check_tag_disjointness(vocab, tags)
    pairs = []
    for i, (domain, src, tgt) in enumerate(rows):
        src_toks = src.split()
        tgt_toks = tgt.split()
        if not src_toks or not tgt_toks:
            raise ValueError(f"row {i}: empty source or target after preprocessing")
        if mode == "token" and inject_tokens:
            src_toks = inject_token(src_toks, domain, tags, vocab)
        did = tags.tag_id(domain)
        src_ids = [vocab.lookup(t) for t in src_toks]
        tgt_ids = [vocab.lookup(t) for t in tgt_toks]
        feats = [did] * len(src_ids) if mode == "feature" else None
        pairs.append(AnnotatedPair(src_ids, tgt_ids, did, feats))
    return pairs
