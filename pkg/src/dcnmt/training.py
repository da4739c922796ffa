"""Minibatch SGD with learning-rate decay, clipping and checkpointing.

Every source of randomness is derived from (seed, epoch), so a run is
bit-reproducible and a checkpoint resumed at epoch e+1 continues the
exact uninterrupted trajectory.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass

import numpy as np

from .model import batch_loss_and_grad, save_model
from .numeric import NumericError, clip_grads, make_rng, sgd_step
from .text import BOS_ID, EOS_ID, PAD_ID

PROGRESS_COLUMNS = ("epoch", "loss", "ppl", "lr", "seconds")
SIDECAR_NAME = "training_log.tsv"


@dataclass
class TrainConfig:
    batch_size: int = 64
    epochs: int = 18
    lr0: float = 1.0
    decay_factor: float = 0.5
    decay_start_epoch: int = 10
    gradient_clip_norm: float = 5.0
    seed: int = 1
    checkpoint_dir: str = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 < self.decay_factor <= 1.0:
            raise ValueError("decay_factor must be in (0, 1]")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


@dataclass
class EpochReport:
    epoch: int
    mean_ce: float
    ppl: float
    lr: float
    seconds: float


def lr_schedule(epoch, cfg):
    """lr0 through ``decay_start_epoch``, then multiplied by ``decay_factor`` each epoch."""
    if epoch < 1:
        raise ValueError("epochs are 1-based")
    if epoch <= cfg.decay_start_epoch:
        return cfg.lr0
    return cfg.lr0 * cfg.decay_factor ** (epoch - cfg.decay_start_epoch)


@dataclass
class Batch:
    src: np.ndarray  # (B, J) int64, <eos>-framed, uniform length
    features: np.ndarray  # (B, J) int64 or None
    tgt_in: np.ndarray  # (B, T) int64, starts with <s>
    tgt_out: np.ndarray  # (B, T) int64, ends with <eos>, padded
    tgt_mask: np.ndarray  # (B, T) float64, 1.0 on non-pad outputs


def _frame_pair(pair):
    src = list(pair.src) + [EOS_ID]
    feats = None
    if pair.src_features is not None:
        feats = list(pair.src_features) + [pair.domain]
    return src, feats


def make_batches(pairs, batch_size, seed):
    """Shuffle, bucket by source length, and pad targets into Batch objects.

    Pairs are shuffled with the seeded rng, grouped by exact framed source
    length (so batches never need source-side padding), split into chunks
    of at most ``batch_size``, and the chunk order is shuffled again.
    Target sequences are padded to the batch maximum; pad positions get
    zero weight in the loss mask.  ``seed`` may be an int or a tuple of
    ints (e.g. (run_seed, epoch)).
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("cannot batch an empty dataset")
    has_feats = pairs[0].src_features is not None
    for p in pairs:
        if (p.src_features is not None) != has_feats:
            raise ValueError("inconsistent feature annotations across the dataset")
    rng = make_rng(*seed) if isinstance(seed, (tuple, list)) else make_rng(seed)
    order = rng.permutation(len(pairs))
    buckets = {}
    for idx in order:
        p = pairs[idx]
        buckets.setdefault(len(p.src) + 1, []).append(p)
    chunks = []
    for length in sorted(buckets):
        group = buckets[length]
        for i in range(0, len(group), batch_size):
            chunks.append(group[i : i + batch_size])
    chunk_order = rng.permutation(len(chunks))
    batches = []
    for ci in chunk_order:
        group = chunks[ci]
        framed = [_frame_pair(p) for p in group]
        B = len(group)
        J = len(framed[0][0])
        src = np.asarray([f[0] for f in framed], dtype=np.int64)
        feats = (
            np.asarray([f[1] for f in framed], dtype=np.int64) if has_feats else None
        )
        T = max(len(p.tgt) for p in group) + 1  # room for <eos>
        tgt_in = np.full((B, T), PAD_ID, dtype=np.int64)
        tgt_out = np.full((B, T), PAD_ID, dtype=np.int64)
        mask = np.zeros((B, T))
        for bi, p in enumerate(group):
            n = len(p.tgt)
            tgt_in[bi, 0] = BOS_ID
            tgt_in[bi, 1 : n + 1] = p.tgt
            tgt_out[bi, :n] = p.tgt
            tgt_out[bi, n] = EOS_ID
            mask[bi, : n + 1] = 1.0
        batches.append(Batch(src, feats, tgt_in, tgt_out, mask))
    return batches


def _first_nonfinite(params):
    # root cause first: a poisoned value contaminates every gradient downstream
    for p in params.parameters():
        if not np.isfinite(p.value).all():
            return p.name + " (value)"
    for p in params.parameters():
        if not np.isfinite(p.grad).all():
            return p.name + " (grad)"
    return "loss"


def train(params, config, pairs, cfg, start_epoch=1, progress=None):
    """Run the SGD loop over ``pairs`` for epochs start_epoch..cfg.epochs.

    Per epoch: shuffle/bucket batches, accumulate the gradient of the
    mean non-pad cross-entropy per batch, clip the global gradient norm,
    and apply SGD at the scheduled learning rate.  A checkpoint plus a
    ``epoch<TAB>loss<TAB>lr`` sidecar line is written per epoch when
    cfg.checkpoint_dir is set.  ``progress`` (e.g. sys.stdout) receives
    one TSV line per epoch: epoch, loss, ppl, lr, seconds.
    """
    if config.mode == "feature":
        if any(p.src_features is None for p in pairs):
            raise ValueError("feature-mode training data is missing feature annotations")
    reports = []
    all_params = params.parameters()
    for epoch in range(start_epoch, cfg.epochs + 1):
        t0 = time.perf_counter()
        lr = lr_schedule(epoch, cfg)
        batches = make_batches(pairs, cfg.batch_size, (cfg.seed, epoch, 0))
        drop_rng = make_rng(cfg.seed, epoch, 1)
        ce_total = 0.0
        tok_total = 0
        for bi, batch in enumerate(batches):
            params.zero_grads()
            mean_ce, count = batch_loss_and_grad(
                params, config, batch, rng=drop_rng, training=True
            )
            if not np.isfinite(mean_ce):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, batch {bi}; "
                    f"first offending parameter: {_first_nonfinite(params)}"
                )
            clip_grads(all_params, cfg.gradient_clip_norm)
            sgd_step(all_params, lr)
            ce_total += mean_ce * count
            tok_total += count
        mean_ce = ce_total / tok_total
        report = EpochReport(epoch, mean_ce, float(np.exp(mean_ce)), lr, time.perf_counter() - t0)
        reports.append(report)
        if cfg.checkpoint_dir:
            os.makedirs(cfg.checkpoint_dir, exist_ok=True)
            ckpt = os.path.join(cfg.checkpoint_dir, f"checkpoint_epoch{epoch:03d}.dcnmt")
            save_model(params, config, ckpt, extra_meta={"epoch": epoch})
            with open(os.path.join(cfg.checkpoint_dir, SIDECAR_NAME), "a", encoding="utf-8") as f:
                f.write(f"{epoch}\t{mean_ce:.6f}\t{lr}\n")
        if progress is not None:
            progress.write(
                f"{epoch}\t{mean_ce:.6f}\t{report.ppl:.6f}\t{lr}\t{report.seconds:.3f}\n"
            )
            progress.flush()
    return reports


def resume_training(checkpoint_path, pairs, cfg, progress=None):
    """Continue a checkpointed run; epoch e+1 losses match an uninterrupted run."""
    from .model import load_model

    params, config, meta = load_model(checkpoint_path, with_meta=True)
    if "epoch" not in meta:
        raise ValueError(f"{checkpoint_path} is not an epoch checkpoint")
    done = int(meta["epoch"])
    reports = train(params, config, pairs, cfg, start_epoch=done + 1, progress=progress)
    return params, config, reports
