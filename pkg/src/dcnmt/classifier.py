"""Sentence-level domain classifier: LSTM over word embeddings, softmax
over the final hidden state.

Routes the "predicted domain" translation condition: every test sentence
is assigned one of the known domain tags, including out-of-domain input.
The classifier shares the translation pipeline's BPE vocabulary.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .numeric import (
    LstmCell,
    NumericError,
    Parameter,
    _stack_backward,
    _stack_forward,
    clip_grads,
    init_lstm_cell,
    make_rng,
    sgd_step,
    softmax,
)
from .serialize import (
    CLASSIFIER_MAGIC,
    ModelFileError,
    TensorShapeError,
    read_container,
    write_container,
)
from .text import RESERVED, DomainTagSet, Vocabulary
from .training import EpochReport, lr_schedule


@dataclass
class ClassifierConfig:
    vocab: Vocabulary
    tags: DomainTagSet
    embed_dim: int = 32
    hidden_dim: int = 32
    num_layers: int = 1

    def __post_init__(self):
        if self.embed_dim <= 0 or self.hidden_dim <= 0 or self.num_layers <= 0:
            raise ValueError("classifier dimensions must be positive")


class ClassifierParams:
    def __init__(self, config, rng=None, tensors=None):
        self.config = config
        V = len(config.vocab)
        K = len(config.tags)
        d = config.embed_dim
        h = config.hidden_dim

        if tensors is None:
            if rng is None:
                raise ValueError("either an rng or tensors is required")
            make = lambda name, r, c: Parameter(name, rng.uniform(-0.1, 0.1, (r, c)))
        else:
            store = dict(tensors)

            def make(name, r, c):
                if name not in store:
                    raise ModelFileError(f"missing tensor '{name}'")
                arr = store.pop(name)
                if arr.shape != (r, c):
                    raise TensorShapeError(
                        f"tensor '{name}' has shape {arr.shape}, expected {(r, c)}"
                    )
                return Parameter(name, arr)

        self.embed = make("embed", V, d)
        if tensors is None:
            self.rnn = [
                init_lstm_cell(rng, f"rnn.{l}", d if l == 0 else h, h)
                for l in range(config.num_layers)
            ]
        else:
            self.rnn = [
                LstmCell(
                    make(f"rnn.{l}.W", d if l == 0 else h, 4 * h),
                    make(f"rnn.{l}.U", h, 4 * h),
                    make(f"rnn.{l}.b", 1, 4 * h),
                )
                for l in range(config.num_layers)
            ]
        self.W_cls = make("W_cls", h, K)
        if tensors is not None and store:
            raise ModelFileError(f"unexpected tensors in file: {sorted(store)}")

    def parameters(self):
        out = [self.embed]
        for cell in self.rnn:
            out.extend(cell.parameters())
        out.append(self.W_cls)
        return out

    def zero_grads(self):
        for p in self.parameters():
            p.grad[...] = 0.0


def _cls_forward(params, ids):
    """ids: (B, J) of equal-length sentences. Returns (logits, cache)."""
    B, J = ids.shape
    xs = [params.embed.value[ids[:, j]] for j in range(J)]
    _, finals, cache = _stack_forward(params.rnn, xs, 0.0, None, False)
    h_final = finals[-1][0]
    logits = h_final @ params.W_cls.value
    return logits, (ids, cache, h_final, finals)


def _cls_backward(params, dlogits, fwd_cache):
    ids, cache, h_final, finals = fwd_cache
    B, J = ids.shape
    params.W_cls.grad += h_final.T @ dlogits
    dh_final = dlogits @ params.W_cls.value.T
    h = params.config.hidden_dim
    L = params.config.num_layers
    d_outputs = [np.zeros((B, h)) for _ in range(J)]
    dfh = [np.zeros((B, h)) for _ in range(L)]
    dfc = [np.zeros((B, h)) for _ in range(L)]
    dfh[L - 1] = dh_final
    d_inputs = _stack_backward(cache, d_outputs, (dfh, dfc))
    for j, d in enumerate(d_inputs):
        np.add.at(params.embed.grad, ids[:, j], d)


def classify(params, src_ids):
    """Predict (tag id, posterior over all domains) for one sentence.

    Ties in the argmax resolve to the lowest tag id.
    """
    src_ids = [int(t) for t in src_ids]
    if not src_ids:
        raise ValueError("cannot classify an empty sentence")
    ids = np.asarray([src_ids], dtype=np.int64)
    logits, _ = _cls_forward(params, ids)
    posterior = softmax(logits)
    return int(np.argmax(posterior[0])), posterior


def classifier_loss_and_grad(params, ids, labels):
    """Mean cross-entropy over one equal-length batch; accumulates gradients."""
    logits, cache = _cls_forward(params, ids)
    probs = softmax(logits)
    B = ids.shape[0]
    rows = np.arange(B)
    loss = float(-np.log(probs[rows, labels]).mean())
    dlogits = probs.copy()
    dlogits[rows, labels] -= 1.0
    dlogits /= B
    _cls_backward(params, dlogits, cache)
    return loss


def _length_batches(data, batch_size, rng):
    order = rng.permutation(len(data))
    buckets = {}
    for idx in order:
        src, label = data[idx]
        buckets.setdefault(len(src), []).append((src, label))
    chunks = []
    for length in sorted(buckets):
        group = buckets[length]
        for i in range(0, len(group), batch_size):
            chunks.append(group[i : i + batch_size])
    out = []
    for ci in rng.permutation(len(chunks)):
        group = chunks[ci]
        ids = np.asarray([g[0] for g in group], dtype=np.int64)
        labels = np.asarray([g[1] for g in group], dtype=np.int64)
        out.append((ids, labels))
    return out


def train_classifier(data, cfg, config, rng=None, progress=None):
    """SGD training over (source ids, domain id) pairs.

    Batches group sentences of identical length so no padding or masking
    is needed.  Deterministic given cfg.seed.  Returns (params, reports).
    """
    data = [(list(src), int(label)) for src, label in data]
    if not data:
        raise ValueError("empty classifier training set")
    if len({label for _, label in data}) < 2:
        raise ValueError("classifier training needs at least two distinct domains")
    if rng is None:
        rng = make_rng(cfg.seed)
    params = ClassifierParams(config, rng=rng)
    all_params = params.parameters()
    reports = []
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        lr = lr_schedule(epoch, cfg)
        batches = _length_batches(data, cfg.batch_size, make_rng(cfg.seed, epoch, 2))
        total = 0.0
        seen = 0
        for bi, (ids, labels) in enumerate(batches):
            params.zero_grads()
            loss = classifier_loss_and_grad(params, ids, labels)
            if not np.isfinite(loss):
                raise NumericError(f"non-finite classifier loss at epoch {epoch}, batch {bi}")
            clip_grads(all_params, cfg.gradient_clip_norm)
            sgd_step(all_params, lr)
            total += loss * ids.shape[0]
            seen += ids.shape[0]
        mean = total / seen
        reports.append(EpochReport(epoch, mean, float(np.exp(mean)), lr, time.perf_counter() - t0))
        if progress is not None:
            progress.write(f"{epoch}\t{mean:.6f}\t{np.exp(mean):.6f}\t{lr}\t{reports[-1].seconds:.3f}\n")
            progress.flush()
    return params, reports


@dataclass
class ClassifierReport:
    domains: list  # tag surfaces in id order
    confusion: np.ndarray  # (K, K) counts, rows = true domain, cols = predicted
    per_domain_recall: list
    overall: float

    def to_tsv(self):
        lines = ["domain\trecall\ttotal"]
        for i, d in enumerate(self.domains):
            total = int(self.confusion[i].sum())
            lines.append(f"{d}\t{self.per_domain_recall[i]:.4f}\t{total}")
        lines.append(f"overall\t{self.overall:.4f}\t{int(self.confusion.sum())}")
        return "\n".join(lines) + "\n"


def evaluate_classifier(params, data):
    """Per-domain recall and the confusion matrix over labeled sentences."""
    data = list(data)
    if not data:
        raise ValueError("empty classifier evaluation set")
    K = len(params.config.tags)
    confusion = np.zeros((K, K), dtype=np.int64)
    for src, label in data:
        pred, _ = classify(params, src)
        confusion[int(label), pred] += 1
    recalls = []
    for i in range(K):
        row = confusion[i].sum()
        recalls.append(float(confusion[i, i] / row) if row else 0.0)
    overall = float(np.trace(confusion) / confusion.sum())
    return ClassifierReport(params.config.tags.surfaces(), confusion, recalls, overall)


def save_classifier(params, config, path, extra_meta=None):
    meta = {
        "embed_dim": config.embed_dim,
        "hidden_dim": config.hidden_dim,
        "num_layers": config.num_layers,
    }
    if extra_meta:
        meta.update(extra_meta)
    write_container(
        path,
        CLASSIFIER_MAGIC,
        meta,
        config.vocab.tokens(),
        config.tags.surfaces(),
        [(p.name, p.value) for p in params.parameters()],
    )


def load_classifier(path):
    meta, vocab_tokens, tag_surfaces, tensors = read_container(path, CLASSIFIER_MAGIC)
    if vocab_tokens[:4] != list(RESERVED):
        raise ModelFileError("vocabulary reserved symbols are corrupt")
    tags = DomainTagSet(tag_surfaces)
    tag_syms = [s for s in tag_surfaces if s in set(vocab_tokens)]
    vocab = Vocabulary(tokens=vocab_tokens[4:], tag_symbols=tag_syms)
    config = ClassifierConfig(
        vocab=vocab,
        tags=tags,
        embed_dim=int(meta["embed_dim"]),
        hidden_dim=int(meta["hidden_dim"]),
        num_layers=int(meta["num_layers"]),
    )
    return ClassifierParams(config, tensors=tensors), config
