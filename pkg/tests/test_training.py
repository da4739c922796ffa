import numpy as np
import pytest

from dcnmt.model import ModelConfig, ModelParams, batch_loss, greedy_decode, load_model
from dcnmt.numeric import NumericError, make_rng
from dcnmt.text import AnnotatedPair, DomainTagSet, Vocabulary, PAD_ID
from dcnmt.training import (
    Batch,
    TrainConfig,
    lr_schedule,
    make_batches,
    resume_training,
    train,
)

TAGS = DomainTagSet(("@A@", "@B@"))


def tiny_config(mode="join", **kw):
    vocab = Vocabulary(tokens=[f"w{i}" for i in range(12)])
    defaults = dict(word_dim=16, feature_dim=0, hidden_dim=16, num_layers=2, dropout_p=0.0)
    defaults.update(kw)
    return ModelConfig(vocab=vocab, tags=TAGS, mode=mode, **defaults)


# ---------------------------------------------------------------------------
# lr schedule


def test_lr_schedule_paper_recipe_values():
    cfg = TrainConfig()
    assert lr_schedule(5, cfg) == 1.0
    assert lr_schedule(10, cfg) == 1.0
    assert lr_schedule(11, cfg) == 0.5
    assert lr_schedule(12, cfg) == 0.25


def test_lr_schedule_custom():
    cfg = TrainConfig(lr0=2.0, decay_factor=0.8, decay_start_epoch=3)
    assert lr_schedule(3, cfg) == 2.0
    assert abs(lr_schedule(5, cfg) - 2.0 * 0.8 ** 2) < 1e-15


def test_lr_schedule_rejects_zero_epoch():
    with pytest.raises(ValueError):
        lr_schedule(0, TrainConfig())


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(decay_factor=0.0)
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)


# ---------------------------------------------------------------------------
# batching


def _uniform_pairs(n, src_len=4, tgt_len=3):
    return [
        AnnotatedPair(list(range(4, 4 + src_len)), list(range(4, 4 + tgt_len)), 0)
        for _ in range(n)
    ]


def test_make_batches_sizes():
    batches = make_batches(_uniform_pairs(10), 3, 1)
    assert sorted(len(b.src) for b in batches) == [1, 3, 3, 3]


def test_make_batches_deterministic():
    pairs = _uniform_pairs(10)
    a = make_batches(pairs, 3, 42)
    b = make_batches(pairs, 3, 42)
    for x, y in zip(a, b):
        assert np.array_equal(x.src, y.src)
        assert np.array_equal(x.tgt_out, y.tgt_out)


def test_make_batches_frames_eos_and_bos():
    pairs = [AnnotatedPair([4, 5], [6, 7, 8], 1)]
    batch = make_batches(pairs, 1, 0)[0]
    assert batch.src.tolist() == [[4, 5, 3]]  # <eos> framed
    assert batch.tgt_in.tolist() == [[2, 6, 7, 8]]  # starts with <s>
    assert batch.tgt_out.tolist() == [[6, 7, 8, 3]]  # ends with <eos>
    assert batch.tgt_mask.tolist() == [[1.0, 1.0, 1.0, 1.0]]


def test_make_batches_feature_framing_uses_domain_for_eos():
    pairs = [AnnotatedPair([4, 5], [6], 1, [1, 1])]
    batch = make_batches(pairs, 1, 0)[0]
    assert batch.features.tolist() == [[1, 1, 1]]


def test_make_batches_buckets_by_source_length():
    pairs = _uniform_pairs(5, src_len=3) + _uniform_pairs(5, src_len=6)
    for batch in make_batches(pairs, 4, 9):
        assert len({row.shape for row in batch.src}) == 1  # uniform per batch


def test_make_batches_pads_targets_with_masked_zeros():
    pairs = [
        AnnotatedPair([4, 5], [6], 0),
        AnnotatedPair([4, 6], [7, 8, 9], 0),
    ]
    batch = make_batches(pairs, 2, 1)[0]
    lens = batch.tgt_mask.sum(axis=1)
    assert sorted(lens.tolist()) == [2.0, 4.0]
    padded_row = int(np.argmin(lens))
    assert (batch.tgt_out[padded_row, 2:] == PAD_ID).all()


def test_pad_positions_contribute_zero_loss():
    # hand-built batch: identical everywhere except extra pad-only columns
    config = tiny_config()
    params = ModelParams(config, rng=make_rng(1))
    src = np.array([[4, 5, 3]])
    short = Batch(src, None, np.array([[2, 6]]), np.array([[6, 3]]), np.ones((1, 2)))
    padded = Batch(
        src,
        None,
        np.array([[2, 6, 0, 0]]),
        np.array([[6, 3, 0, 0]]),
        np.array([[1.0, 1.0, 0.0, 0.0]]),
    )
    loss_a, count_a = batch_loss(params, config, short)
    loss_b, count_b = batch_loss(params, config, padded)
    assert count_a == count_b == 2
    assert abs(loss_a - loss_b) < 1e-12


def test_make_batches_empty_dataset():
    with pytest.raises(ValueError):
        make_batches([], 4, 0)


def test_make_batches_inconsistent_features():
    pairs = [AnnotatedPair([4], [5], 0, [0]), AnnotatedPair([4], [5], 0)]
    with pytest.raises(ValueError):
        make_batches(pairs, 2, 0)


# ---------------------------------------------------------------------------
# training loop


OVERFIT_PAIR = AnnotatedPair([4, 5, 6, 7], [8, 9, 10, 11], 0)


def test_overfit_single_pair_memorizes():
    config = tiny_config(num_layers=1)
    params = ModelParams(config, rng=make_rng(11))
    cfg = TrainConfig(batch_size=1, epochs=200, lr0=1.0, decay_start_epoch=200,
                      gradient_clip_norm=1.0, seed=4)
    reports = train(params, config, [OVERFIT_PAIR], cfg)
    assert reports[-1].ppl < 1.05
    assert greedy_decode(params, config, OVERFIT_PAIR.src) == OVERFIT_PAIR.tgt


def test_overfit_loss_monotone_after_epoch_3():
    config = tiny_config()
    params = ModelParams(config, rng=make_rng(11))
    cfg = TrainConfig(batch_size=1, epochs=60, lr0=0.5, decay_start_epoch=60,
                      gradient_clip_norm=5.0, seed=4)
    reports = train(params, config, [OVERFIT_PAIR], cfg)
    losses = [r.mean_ce for r in reports]
    for a, b in zip(losses[3:], losses[4:]):
        assert b <= a + 1e-12


def test_identical_seeds_identical_losses():
    config = tiny_config(dropout_p=0.2)
    pairs = [
        AnnotatedPair([4, 5, 6], [7, 8], 0),
        AnnotatedPair([5, 6, 7], [8, 9], 1),
        AnnotatedPair([6, 7, 8], [9, 10], 0),
    ]
    runs = []
    for _ in range(2):
        params = ModelParams(config, rng=make_rng(21))
        cfg = TrainConfig(batch_size=2, epochs=5, lr0=0.5, seed=33)
        runs.append([r.mean_ce for r in train(params, config, pairs, cfg)])
    assert runs[0] == runs[1]


def test_reported_lr_matches_schedule():
    config = tiny_config()
    params = ModelParams(config, rng=make_rng(1))
    cfg = TrainConfig(batch_size=1, epochs=6, lr0=1.0, decay_factor=0.5,
                      decay_start_epoch=4, seed=2)
    reports = train(params, config, [OVERFIT_PAIR], cfg)
    for r in reports:
        assert r.lr == lr_schedule(r.epoch, cfg)
        assert r.ppl >= 1.0
        assert abs(r.ppl - np.exp(r.mean_ce)) < 1e-12


def test_progress_stream_is_tsv(capsys=None):
    import io

    config = tiny_config()
    params = ModelParams(config, rng=make_rng(1))
    cfg = TrainConfig(batch_size=1, epochs=2, lr0=0.5, seed=2)
    buf = io.StringIO()
    train(params, config, [OVERFIT_PAIR], cfg, progress=buf)
    lines = buf.getvalue().strip().splitlines()
    assert len(lines) == 2
    for i, line in enumerate(lines, start=1):
        cols = line.split("\t")
        assert len(cols) == 5
        assert int(cols[0]) == i


def test_nonfinite_loss_abort_names_epoch_batch_parameter():
    config = tiny_config()
    params = ModelParams(config, rng=make_rng(1))
    params.b_out.value[0, 8] = float("nan")  # poisons every step's logits
    cfg = TrainConfig(batch_size=1, epochs=1, lr0=0.5, seed=2)
    with pytest.raises(NumericError) as err:
        train(params, config, [OVERFIT_PAIR], cfg)
    msg = str(err.value)
    assert "epoch 1" in msg and "batch 0" in msg and "b_out" in msg


def test_checkpoints_and_sidecar(tmp_path):
    config = tiny_config()
    params = ModelParams(config, rng=make_rng(1))
    ckdir = tmp_path / "ck"
    cfg = TrainConfig(batch_size=1, epochs=3, lr0=0.5, seed=2, checkpoint_dir=str(ckdir))
    reports = train(params, config, [OVERFIT_PAIR], cfg)
    files = sorted(p.name for p in ckdir.iterdir())
    assert "checkpoint_epoch001.dcnmt" in files
    assert "checkpoint_epoch003.dcnmt" in files
    log = (ckdir / "training_log.tsv").read_text().strip().splitlines()
    assert len(log) == 3
    for line, rep in zip(log, reports):
        epoch, loss, lr = line.split("\t")
        assert int(epoch) == rep.epoch
        assert abs(float(loss) - rep.mean_ce) < 1e-5
        assert float(lr) == rep.lr


def test_checkpoint_resume_matches_uninterrupted_run(tmp_path):
    pairs = [
        AnnotatedPair([4, 5, 6], [7, 8], 0),
        AnnotatedPair([5, 6, 7], [8, 9], 1),
        AnnotatedPair([7, 8], [9], 0),
    ]
    config = tiny_config(dropout_p=0.2)

    full_params = ModelParams(config, rng=make_rng(5))
    cfg_full = TrainConfig(batch_size=2, epochs=4, lr0=0.5, seed=9,
                           checkpoint_dir=str(tmp_path / "full"))
    full_reports = train(full_params, config, pairs, cfg_full)

    part_params = ModelParams(config, rng=make_rng(5))
    cfg_part = TrainConfig(batch_size=2, epochs=2, lr0=0.5, seed=9,
                           checkpoint_dir=str(tmp_path / "part"))
    train(part_params, config, pairs, cfg_part)

    cfg_resume = TrainConfig(batch_size=2, epochs=4, lr0=0.5, seed=9)
    resumed_params, _, resumed_reports = resume_training(
        str(tmp_path / "part" / "checkpoint_epoch002.dcnmt"), pairs, cfg_resume
    )
    assert [r.epoch for r in resumed_reports] == [3, 4]
    for fr, rr in zip(full_reports[2:], resumed_reports):
        assert fr.mean_ce == rr.mean_ce  # bitwise-identical trajectory
    for fp, rp in zip(full_params.parameters(), resumed_params.parameters()):
        assert np.array_equal(fp.value, rp.value)


def test_feature_mode_requires_annotations():
    config = tiny_config("feature", feature_dim=4)
    params = ModelParams(config, rng=make_rng(1))
    cfg = TrainConfig(batch_size=1, epochs=1, seed=1)
    with pytest.raises(ValueError):
        train(params, config, [AnnotatedPair([4], [5], 0)], cfg)
