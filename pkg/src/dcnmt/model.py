"""Bidirectional-LSTM encoder / attentional LSTM decoder with domain control.

The source sentence is embedded (optionally extended with domain-feature
cells), read by forward and backward LSTM stacks whose per-position
outputs are summed, and decoded by an LSTM stack with global attention:
the attention score is the bilinear form h_t . W_a . hbar_s, weights are
its softmax over source positions, and the context vector is the
weighted average of the summed encoder states.  The attentional state
tanh([context ; hidden] . W_c) feeds the output projection.

Batches are rows: a (B, d) array holds B sentences' vectors at one
position, and a sequence is a list of such arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numeric import (
    Parameter,
    LstmCell,
    ShapeError,
    _dropout_forward,
    _lstm_forward,
    _lstm_backward,
    _stack_forward,
    _stack_backward,
    init_lstm_cell,
    softmax,
)
from .serialize import (
    MODEL_MAGIC,
    ModelFileError,
    TensorShapeError,
    read_container,
    write_container,
)
from .text import (
    BOS_ID,
    EOS_ID,
    RESERVED,
    DomainTagSet,
    Vocabulary,
)

MODES = ("single", "join", "token", "feature")

# Full-scale recipe values, kept for reference next to the desk-scale
# defaults used below: word embeddings 500 cells, BPE vocabulary 32000,
# minibatch 64, dropout 0.3, 18 epochs.
DESK_WORD_DIM = 64
DESK_HIDDEN_DIM = 64
DESK_FEATURE_DIM = 8


@dataclass
class ModelConfig:
    """Architecture and decoding settings; vocab and tags travel with the model."""

    vocab: Vocabulary
    tags: DomainTagSet
    mode: str
    word_dim: int = DESK_WORD_DIM
    feature_dim: int = 0
    hidden_dim: int = DESK_HIDDEN_DIM
    num_layers: int = 2
    dropout_p: float = 0.3
    max_decode_len: int = 100

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.word_dim <= 0 or self.hidden_dim <= 0 or self.num_layers <= 0:
            raise ValueError("word_dim, hidden_dim and num_layers must be positive")
        if (self.mode == "feature") != (self.feature_dim > 0):
            raise ValueError(
                "feature_dim must be positive exactly when mode is 'feature' "
                f"(mode={self.mode!r}, feature_dim={self.feature_dim})"
            )
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must be in [0, 1), got {self.dropout_p}")

    @property
    def encoder_input_dim(self):
        return self.word_dim + self.feature_dim


class ModelParams:
    """All learnable tensors, each registered under a unique name.

    Creation order (and therefore the seeded-initialization draw order)
    is fixed: embeddings, encoder stacks, decoder stack, attention and
    output projections.
    """

    def __init__(self, config, rng=None, tensors=None):
        self.config = config
        V = len(config.vocab)
        h = config.hidden_dim
        dw = config.word_dim
        df = config.feature_dim

        if tensors is None:
            if rng is None:
                raise ValueError("either an rng (fresh init) or tensors (load) is required")
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

        def make_cell(name, input_dim):
            if tensors is None:
                return init_lstm_cell(rng, name, input_dim, h)
            return LstmCell(
                make(f"{name}.W", input_dim, 4 * h),
                make(f"{name}.U", h, 4 * h),
                make(f"{name}.b", 1, 4 * h),
            )

        self.src_embed = make("src_embed", V, dw)
        self.tgt_embed = make("tgt_embed", V, dw)
        self.feat_embed = (
            make("feat_embed", config.tags.feature_rows, df) if df > 0 else None
        )
        enc_in = config.encoder_input_dim
        self.enc_fwd = [
            make_cell(f"enc_fwd.{l}", enc_in if l == 0 else h)
            for l in range(config.num_layers)
        ]
        self.enc_bwd = [
            make_cell(f"enc_bwd.{l}", enc_in if l == 0 else h)
            for l in range(config.num_layers)
        ]
        self.dec = [
            make_cell(f"dec.{l}", dw if l == 0 else h) for l in range(config.num_layers)
        ]
        self.W_a = make("W_a", h, h)
        self.W_c = make("W_c", 2 * h, h)
        self.W_out = make("W_out", h, V)
        self.b_out = make("b_out", 1, V)
        if tensors is None:
            self.b_out.value[...] = 0.0
        elif store:
            raise ModelFileError(f"unexpected tensors in file: {sorted(store)}")

    def parameters(self):
        out = [self.src_embed, self.tgt_embed]
        if self.feat_embed is not None:
            out.append(self.feat_embed)
        for stack in (self.enc_fwd, self.enc_bwd, self.dec):
            for cell in stack:
                out.extend(cell.parameters())
        out.extend([self.W_a, self.W_c, self.W_out, self.b_out])
        return out

    def named(self):
        return {p.name: p for p in self.parameters()}

    def zero_grads(self):
        for p in self.parameters():
            p.grad[...] = 0.0


@dataclass
class EncoderOutputs:
    """Summed bidirectional states plus decoder-initialization states."""

    hbar: list  # J arrays of shape (B, h): forward_out[j] + backward_out[j]
    final_h: list  # per layer, forward final + backward final
    final_c: list

    def __len__(self):
        return len(self.hbar)


@dataclass
class AttentionResult:
    weights: np.ndarray  # (B, J), rows sum to 1
    context: np.ndarray  # (B, h)


# ---------------------------------------------------------------------------
# Source embedding


def _ids_matrix(ids):
    arr = np.asarray(ids, dtype=np.int64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2 or arr.size == 0:
        raise ValueError(f"token ids must form a non-empty 1-D or 2-D array, got shape {arr.shape}")
    return arr


def embed_source(src, features, params, config):
    """Embed source ids; feature mode concatenates the tag's feature cells.

    Returns a list of J arrays of shape (B, word_dim + feature_dim).
    """
    src = _ids_matrix(src)
    if config.mode == "feature":
        if features is None:
            raise ValueError("feature-mode embedding requires a feature annotation")
        features = _ids_matrix(features)
        if features.shape != src.shape:
            raise ValueError(
                f"feature annotation shape {features.shape} != source shape {src.shape}"
            )
        if features.min() < 0 or features.max() >= config.tags.feature_rows:
            raise ValueError("feature annotation contains an unknown tag id")
    out = []
    for j in range(src.shape[1]):
        e = params.src_embed.value[src[:, j]]
        if config.mode == "feature":
            e = np.concatenate([e, params.feat_embed.value[features[:, j]]], axis=1)
        out.append(e)
    return out


def _embed_source_backward(d_inputs, src, features, params, config):
    src = _ids_matrix(src)
    dw = config.word_dim
    for j, d in enumerate(d_inputs):
        np.add.at(params.src_embed.grad, src[:, j], d[:, :dw])
        if config.mode == "feature":
            feats = _ids_matrix(features)
            np.add.at(params.feat_embed.grad, feats[:, j], d[:, dw:])


# ---------------------------------------------------------------------------
# Encoder


def _encode_forward(inputs, params, config, rng, training):
    f_out, f_fin, f_cache = _stack_forward(
        params.enc_fwd, inputs, config.dropout_p, rng, training, reverse=False
    )
    b_out, b_fin, b_cache = _stack_forward(
        params.enc_bwd, inputs, config.dropout_p, rng, training, reverse=True
    )
    hbar = [a + b for a, b in zip(f_out, b_out)]
    final_h = [fh + bh for (fh, _), (bh, _) in zip(f_fin, b_fin)]
    final_c = [fc + bc for (_, fc), (_, bc) in zip(f_fin, b_fin)]
    return EncoderOutputs(hbar, final_h, final_c), (f_cache, b_cache)


def _encode_backward(cache, d_hbar, d_final_h, d_final_c):
    f_cache, b_cache = cache
    finals = (d_final_h, d_final_c)
    d_in_f = _stack_backward(f_cache, d_hbar, finals)
    d_in_b = _stack_backward(b_cache, d_hbar, finals)
    return [a + b for a, b in zip(d_in_f, d_in_b)]


def encode(inputs, params, config, rng=None, training=False):
    """Run both encoder directions over embedded inputs and sum their outputs."""
    if not inputs:
        raise ValueError("cannot encode an empty input sequence")
    enc, _ = _encode_forward(inputs, params, config, rng, training)
    return enc


def init_decoder_state(enc):
    """Decoder start state: the summed per-layer final encoder states."""
    return [(h.copy(), c.copy()) for h, c in zip(enc.final_h, enc.final_c)]


# ---------------------------------------------------------------------------
# Attention


def _attend_forward(h_t, hbar, W_a):
    proj = h_t @ W_a  # (B, h)
    scores = np.stack([np.sum(proj * hb, axis=1) for hb in hbar], axis=1)  # (B, J)
    weights = softmax(scores)
    context = np.zeros_like(h_t)
    for j, hb in enumerate(hbar):
        context += weights[:, j : j + 1] * hb
    return weights, context, (h_t, hbar, proj, weights)


def _attend_backward(dcontext, cache, W_a_param):
    h_t, hbar, proj, weights = cache
    J = len(hbar)
    dweights = np.stack([np.sum(dcontext * hb, axis=1) for hb in hbar], axis=1)
    dhbar = [weights[:, j : j + 1] * dcontext for j in range(J)]
    dscores = weights * (dweights - np.sum(dweights * weights, axis=1, keepdims=True))
    dproj = np.zeros_like(proj)
    for j, hb in enumerate(hbar):
        dproj += dscores[:, j : j + 1] * hb
        dhbar[j] += dscores[:, j : j + 1] * proj
    W_a_param.grad += h_t.T @ dproj
    dh_t = dproj @ W_a_param.value.T
    return dh_t, dhbar


def attend(h_t, enc, params):
    """Global attention over the encoder outputs from one decoder state.

    Scores are the bilinear form h_t . W_a . hbar_s; weights are their
    softmax over source positions; the context is the weighted average.
    """
    if len(enc) == 0:
        raise ValueError("cannot attend over an empty encoding")
    h_t = np.asarray(h_t, dtype=np.float64)
    if h_t.ndim == 1:
        h_t = h_t.reshape(1, -1)
    h = params.W_a.value.shape[0]
    if h_t.shape[1] != h:
        raise ShapeError(f"decoder state width {h_t.shape[1]} != attention dim {h}")
    weights, context, _ = _attend_forward(h_t, enc.hbar, params.W_a.value)
    return AttentionResult(weights, context)


# ---------------------------------------------------------------------------
# Decoder


def _decode_step_forward(prev_ids, state, hbar, params, config, rng, training):
    prev_ids = np.asarray(prev_ids, dtype=np.int64).reshape(-1)
    x = params.tgt_embed.value[prev_ids]
    L = config.num_layers
    new_state = []
    steps = []
    masks = []
    inp = x
    for li, cell in enumerate(params.dec):
        h, c = state[li]
        h2, c2, sc = _lstm_forward(cell, inp, h, c)
        new_state.append((h2, c2))
        steps.append(sc)
        if li < L - 1 and training and config.dropout_p > 0.0:
            inp, m = _dropout_forward(h2, config.dropout_p, rng)
            masks.append(m)
        else:
            inp = h2
            masks.append(None)
    h_top = new_state[-1][0]
    weights, context, att_cache = _attend_forward(h_top, hbar, params.W_a.value)
    comb = np.concatenate([context, h_top], axis=1)
    htilde = np.tanh(comb @ params.W_c.value)
    logits = htilde @ params.W_out.value + params.b_out.value
    cache = (prev_ids, steps, masks, att_cache, comb, htilde)
    return logits, new_state, cache


def _decode_step_backward(dlogits, d_new_state, cache, params, config):
    """Backward through one decoder step.

    ``d_new_state`` carries the recurrent gradients flowing from the next
    time step into this step's (h, c) per layer.  Returns (d_prev_state,
    dhbar contribution) and accumulates all parameter gradients.
    """
    prev_ids, steps, masks, att_cache, comb, htilde = cache
    h = config.hidden_dim
    params.W_out.grad += htilde.T @ dlogits
    params.b_out.grad += dlogits.sum(axis=0, keepdims=True)
    dhtilde = dlogits @ params.W_out.value.T
    dpre = dhtilde * (1.0 - htilde * htilde)
    params.W_c.grad += comb.T @ dpre
    dcomb = dpre @ params.W_c.value.T
    dcontext = dcomb[:, :h]
    dh_top_comb = dcomb[:, h:]
    dh_t_att, dhbar = _attend_backward(dcontext, att_cache, params.W_a)

    d_prev_state = [None] * config.num_layers
    d_above = None
    for li in reversed(range(config.num_layers)):
        dh2 = d_new_state[li][0].copy()
        dc2 = d_new_state[li][1]
        if li == config.num_layers - 1:
            dh2 += dh_top_comb + dh_t_att
        else:
            dh2 += d_above * masks[li] if masks[li] is not None else d_above
        dx, dh_prev, dc_prev = _lstm_backward(params.dec[li], dh2, dc2, steps[li])
        d_prev_state[li] = (dh_prev, dc_prev)
        d_above = dx
    np.add.at(params.tgt_embed.grad, prev_ids, d_above)
    return d_prev_state, dhbar


def decode_step(prev_ids, state, enc, params, config, rng=None, training=False):
    """One decoding transition: embed the previous target token, advance the
    decoder stack, attend, and produce the next-token distribution.

    Returns (probabilities over the vocabulary, new decoder state).
    """
    if state is None:
        raise ValueError("decoder state not initialized; call init_decoder_state first")
    logits, new_state, _ = _decode_step_forward(
        prev_ids, state, enc.hbar, params, config, rng, training
    )
    return softmax(logits), new_state


# ---------------------------------------------------------------------------
# Sequence loss (teacher forcing)


def batch_loss_and_grad(params, config, batch, rng=None, training=False):
    """Mean non-pad token cross-entropy over a batch; accumulates gradients.

    Returns (mean cross-entropy, non-pad token count).  The gradient of
    the mean is accumulated into every parameter's ``grad``, so callers
    must zero gradients beforehand.
    """
    ce_sum, count, cache = _loss_forward(params, config, batch, rng, training)
    if count == 0:
        raise ValueError("batch contains no non-pad target tokens")
    _loss_backward(params, config, batch, cache, 1.0 / count)
    return ce_sum / count, count


def batch_loss(params, config, batch, rng=None, training=False):
    """Forward-only variant of ``batch_loss_and_grad``."""
    ce_sum, count, _ = _loss_forward(params, config, batch, rng, training)
    return ce_sum / count, count


def _loss_forward(params, config, batch, rng, training):
    inputs = embed_source(batch.src, batch.features, params, config)
    enc, enc_cache = _encode_forward(inputs, params, config, rng, training)
    state = init_decoder_state(enc)
    B, T = batch.tgt_in.shape
    rows = np.arange(B)
    ce_sum = 0.0
    step_caches = []
    for t in range(T):
        logits, state, cache = _decode_step_forward(
            batch.tgt_in[:, t], state, enc.hbar, params, config, rng, training
        )
        probs = softmax(logits)
        p_true = probs[rows, batch.tgt_out[:, t]]
        ce_sum += float(-(np.log(p_true) * batch.tgt_mask[:, t]).sum())
        step_caches.append((cache, probs))
    count = int(batch.tgt_mask.sum())
    return ce_sum, count, (enc_cache, step_caches, len(inputs))


def _loss_backward(params, config, batch, cache, scale):
    enc_cache, step_caches, J = cache
    B, T = batch.tgt_in.shape
    rows = np.arange(B)
    h = config.hidden_dim
    d_state = [
        (np.zeros((B, h)), np.zeros((B, h))) for _ in range(config.num_layers)
    ]
    dhbar_total = [np.zeros((B, h)) for _ in range(J)]
    for t in reversed(range(T)):
        step_cache, probs = step_caches[t]
        dlogits = probs.copy()
        dlogits[rows, batch.tgt_out[:, t]] -= 1.0
        dlogits *= (batch.tgt_mask[:, t] * scale)[:, None]
        d_state, dhbar_step = _decode_step_backward(dlogits, d_state, step_cache, params, config)
        for j in range(J):
            dhbar_total[j] += dhbar_step[j]
    d_final_h = [s[0] for s in d_state]
    d_final_c = [s[1] for s in d_state]
    d_inputs = _encode_backward(enc_cache, dhbar_total, d_final_h, d_final_c)
    _embed_source_backward(d_inputs, batch.src, batch.features, params, config)


# ---------------------------------------------------------------------------
# Greedy decoding


def greedy_decode(params, config, src_ids, domain=None):
    """Translate one sentence by repeated argmax until <eos> or the length cap.

    ``src_ids`` are raw (unframed) source token ids.  ``domain`` is a tag
    id: in token mode its surface form is injected before the <eos>
    framing; in feature mode it annotates every source position
    (falling back to the reserved none id when absent); in single/join
    modes it is ignored.  Dropout is off, so the result is a pure
    function of (params, src_ids, domain).  Ties in the argmax resolve
    to the lowest token id.  Reserved control symbols are excluded from
    the returned sequence.
    """
    src_ids = [int(t) for t in src_ids]
    if not src_ids:
        raise ValueError("cannot translate an empty source sentence")
    tags = config.tags
    if config.mode == "token" and domain is not None:
        surface = tags.surface(int(domain))
        vid = config.vocab.get(surface)
        if vid is None:
            raise ValueError(
                f"domain tag {surface!r} is not in the model vocabulary; "
                "was the model built in token mode?"
            )
        src_ids = src_ids + [vid]
    framed = src_ids + [EOS_ID]
    features = None
    if config.mode == "feature":
        fid = int(domain) if domain is not None else tags.none_id
        if not 0 <= fid <= tags.none_id:
            raise ValueError(f"domain tag id {domain} out of range")
        features = [fid] * len(framed)
    src = np.asarray([framed], dtype=np.int64)
    feats = np.asarray([features], dtype=np.int64) if features is not None else None
    inputs = embed_source(src, feats, params, config)
    enc, _ = _encode_forward(inputs, params, config, None, False)
    state = init_decoder_state(enc)
    out = []
    prev = np.asarray([BOS_ID], dtype=np.int64)
    for _ in range(config.max_decode_len):
        logits, state, _ = _decode_step_forward(
            prev, state, enc.hbar, params, config, None, False
        )
        nxt = int(np.argmax(logits[0]))
        if nxt == EOS_ID:
            break
        out.append(nxt)
        prev = np.asarray([nxt], dtype=np.int64)
    return [t for t in out if t >= len(RESERVED)]


# ---------------------------------------------------------------------------
# Serialization


def save_model(params, config, path, extra_meta=None):
    """Write the model in the named-tensor container format (magic DCNMT)."""
    meta = {
        "mode": config.mode,
        "word_dim": config.word_dim,
        "feature_dim": config.feature_dim,
        "hidden_dim": config.hidden_dim,
        "num_layers": config.num_layers,
        "dropout_p": repr(config.dropout_p),
        "max_decode_len": config.max_decode_len,
    }
    if extra_meta:
        meta.update(extra_meta)
    write_container(
        path,
        MODEL_MAGIC,
        meta,
        config.vocab.tokens(),
        config.tags.surfaces(),
        [(p.name, p.value) for p in params.parameters()],
    )


def load_model(path, with_meta=False):
    """Load a model saved by ``save_model``; tensors round-trip bit-exactly."""
    meta, vocab_tokens, tag_surfaces, tensors = read_container(path, MODEL_MAGIC)
    if vocab_tokens[:4] != list(RESERVED):
        raise ModelFileError("vocabulary reserved symbols are corrupt")
    tags = DomainTagSet(tag_surfaces)
    tag_syms = [s for s in tag_surfaces if s in set(vocab_tokens)]
    vocab = Vocabulary(tokens=vocab_tokens[4:], tag_symbols=tag_syms)
    try:
        config = ModelConfig(
            vocab=vocab,
            tags=tags,
            mode=meta["mode"],
            word_dim=int(meta["word_dim"]),
            feature_dim=int(meta["feature_dim"]),
            hidden_dim=int(meta["hidden_dim"]),
            num_layers=int(meta["num_layers"]),
            dropout_p=float(meta["dropout_p"]),
            max_decode_len=int(meta["max_decode_len"]),
        )
    except KeyError as e:
        raise ModelFileError(f"missing config field {e}") from None
    params = ModelParams(config, tensors=tensors)
    if with_meta:
        return params, config, meta
    return params, config
