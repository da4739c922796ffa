"""Command-line entry point wiring the whole pipeline.

Subcommands: gen-corpus, learn-bpe, preprocess, train, translate,
train-classifier, classify, bleu, experiment, cross-matrix.  Every
subcommand accepts ``--config FILE`` with flat ``key = value`` lines
(``#`` comments); explicit command-line flags win over file values, and
unknown keys are fatal.  Exit codes: 0 success, 1 usage error, 2
data/model error.
"""

from __future__ import annotations

import argparse
import sys

from .classifier import (
    ClassifierConfig,
    evaluate_classifier,
    save_classifier,
    train_classifier,
)
from .evaluation import bleu as bleu_score
from .evaluation import cross_domain_matrix, run_experiment
from .model import ModelConfig, ModelParams, save_model
from .numeric import NumericError, make_rng
from .pipeline import DomainPredictor, Translator
from .serialize import ModelFileError
from .synthetic import CorpusSpec, generate, load_lexicon
from .text import (
    BpeModel,
    DomainTagSet,
    Vocabulary,
    bpe_labeled_rows,
    build_vocab,
    inject_token,
    learn_bpe,
    make_pairs,
    read_labeled_corpus,
    read_text_corpus,
    write_labeled_corpus,
)
from .training import TrainConfig, train

MODES = ("single", "join", "token", "feature")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage().rstrip()}")


def _parse_config_file(path):
    cfg = {}
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            key, val = line.split("=", 1)
            key = key.strip()
            val = val.strip()
            if key in cfg:
                raise UsageError(f"{path}:{lineno}: duplicate key {key!r}")
            cfg[key] = val
    return cfg


def _convert(value, typ, key):
    if typ is bool:
        low = value.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"config key {key!r}: cannot parse {value!r} as a flag")
    try:
        return typ(value)
    except (TypeError, ValueError):
        raise UsageError(f"config key {key!r}: cannot parse {value!r} as {typ.__name__}")


def _resolve(args, config, key, default=None, typ=str, required=False):
    """Flag value if given, else config-file value, else default."""
    value = getattr(args, key, None)
    if value is None and key in config:
        value = _convert(config.pop(key), typ, key)
    if value is None:
        value = default
    if value is None and required:
        raise UsageError(f"missing required option --{key.replace('_', '-')}")
    return value


def _config_done(config):
    if config:
        raise UsageError(f"unknown configuration keys: {', '.join(sorted(config))}")


def _domain_tags(rows, override=None):
    if override:
        return DomainTagSet(tuple(override.split(",")))
    return DomainTagSet(tuple(sorted({d for d, _, _ in rows})))


# ---------------------------------------------------------------------------
# Subcommand handlers


def _cmd_gen_corpus(args, config):
    out = _resolve(args, config, "out", required=True)
    spec = CorpusSpec(
        domains=tuple(_resolve(args, config, "domains", "@MED@,@IT@,@LEGAL@").split(",")),
        shared_vocab_size=_resolve(args, config, "shared_vocab", 80, int),
        domain_vocab_size=_resolve(args, config, "domain_vocab", 120, int),
        sentences_per_domain=_resolve(args, config, "sentences", 2000, int),
        len_range=(
            _resolve(args, config, "min_len", 4, int),
            _resolve(args, config, "max_len", 9, int),
        ),
        seed=_resolve(args, config, "seed", 1, int),
        num_ambiguous=_resolve(args, config, "ambiguous", 12, int),
    )
    _config_done(config)
    corpus = generate(spec)
    corpus.write(out)
    print(
        f"wrote {len(corpus.train)} train / {len(corpus.test)} test sentences "
        f"for {len(spec.domains)} domains to {out}"
    )
    return 0


def _cmd_learn_bpe(args, config):
    data = _resolve(args, config, "data", required=True)
    merges = _resolve(args, config, "merges", 500, int)
    out = _resolve(args, config, "out", required=True)
    plain = _resolve(args, config, "plain", False, bool)
    _config_done(config)
    if plain:
        sentences = read_text_corpus(data)
    else:
        rows = read_labeled_corpus(data)
        sentences = [src for _, src, _ in rows] + [tgt for _, _, tgt in rows]
    model = learn_bpe(sentences, merges)
    model.save(out)
    print(f"learned {len(model.merges)} merges from {data} -> {out}")
    return 0


def _cmd_preprocess(args, config):
    data = _resolve(args, config, "data", required=True)
    bpe_path = _resolve(args, config, "bpe", required=True)
    mode = _resolve(args, config, "mode", required=True)
    out = _resolve(args, config, "out", required=True)
    vocab_out = _resolve(args, config, "vocab_out", required=True)
    vocab_size = _resolve(args, config, "vocab_size", 1600, int)
    domains = _resolve(args, config, "domains")
    _config_done(config)
    if mode not in MODES:
        raise UsageError(f"--mode must be one of {MODES}")
    rows = read_labeled_corpus(data)
    tags = _domain_tags(rows, domains)
    bpe = BpeModel.load(bpe_path)
    rows = bpe_labeled_rows(rows, bpe)
    vocab = build_vocab(
        [src for _, src, _ in rows] + [tgt for _, _, tgt in rows], vocab_size
    )
    if mode == "token":
        for surface in tags:
            vocab.add_tag(surface)
        rows = [
            (d, " ".join(inject_token(src.split(), d, tags, vocab)), tgt)
            for d, src, tgt in rows
        ]
    else:
        for surface in tags:
            if surface in vocab:
                raise UsageError(
                    f"domain tag {surface} occurs as a corpus word; pick different tags"
                )
    write_labeled_corpus(out, rows)
    vocab.save(vocab_out)
    print(f"preprocessed {len(rows)} rows (mode={mode}, vocab={len(vocab)}) -> {out}")
    return 0


def _cmd_train(args, config):
    data = _resolve(args, config, "data", required=True)
    vocab_path = _resolve(args, config, "vocab", required=True)
    mode = _resolve(args, config, "mode", required=True)
    out = _resolve(args, config, "out", required=True)
    checkpoint_dir = _resolve(args, config, "checkpoint_dir")
    domains = _resolve(args, config, "domains")
    filter_domain = _resolve(args, config, "filter_domain")
    word_dim = _resolve(args, config, "word_dim", 64, int)
    feature_dim = _resolve(args, config, "feature_dim", None, int)
    hidden_dim = _resolve(args, config, "hidden_dim", 64, int)
    layers = _resolve(args, config, "layers", 2, int)
    dropout = _resolve(args, config, "dropout", 0.3, float)
    max_decode_len = _resolve(args, config, "max_decode_len", 100, int)
    cfg = TrainConfig(
        batch_size=_resolve(args, config, "batch_size", 64, int),
        epochs=_resolve(args, config, "epochs", 18, int),
        lr0=_resolve(args, config, "lr", 1.0, float),
        decay_factor=_resolve(args, config, "decay_factor", 0.5, float),
        decay_start_epoch=_resolve(args, config, "decay_start", 10, int),
        gradient_clip_norm=_resolve(args, config, "clip", 5.0, float),
        seed=_resolve(args, config, "seed", 1, int),
        checkpoint_dir=checkpoint_dir,
    )
    _config_done(config)
    if mode not in MODES:
        raise UsageError(f"--mode must be one of {MODES}")
    if feature_dim is None:
        feature_dim = 8 if mode == "feature" else 0
    rows = read_labeled_corpus(data)
    tags = _domain_tags(rows, domains)
    if filter_domain:
        rows = [r for r in rows if r[0] == filter_domain]
        if not rows:
            raise ValueError(f"no rows with domain {filter_domain}")
    vocab = Vocabulary.load(vocab_path, tags=tags)
    pairs = make_pairs(rows, vocab, tags, mode)
    model_config = ModelConfig(
        vocab=vocab,
        tags=tags,
        mode=mode,
        word_dim=word_dim,
        feature_dim=feature_dim,
        hidden_dim=hidden_dim,
        num_layers=layers,
        dropout_p=dropout,
        max_decode_len=max_decode_len,
    )
    params = ModelParams(model_config, rng=make_rng(cfg.seed))
    train(params, model_config, pairs, cfg, progress=sys.stdout)
    save_model(params, model_config, out)
    print(f"saved model to {out}", file=sys.stderr)
    return 0


def _cmd_translate(args, config):
    model_path = _resolve(args, config, "model", required=True)
    bpe_path = _resolve(args, config, "bpe")
    domain = _resolve(args, config, "domain")
    classifier_path = _resolve(args, config, "classifier")
    _config_done(config)
    if domain == "auto" and not classifier_path:
        raise UsageError("--domain auto requires --classifier")
    translator = Translator.load(model_path, bpe_path)
    predictor = None
    oracle = None
    if domain == "auto":
        predictor = DomainPredictor.load(classifier_path, bpe_path)
    elif domain is not None:
        if domain not in translator.config.tags:
            raise UsageError(
                f"unknown domain tag {domain!r}; model knows "
                f"{', '.join(translator.config.tags.surfaces())}"
            )
        oracle = domain
    for line in sys.stdin:
        line = line.rstrip("\n")
        if not line.strip():
            print("", flush=False)
            print("warning: empty input line passed through", file=sys.stderr)
            continue
        print(translator.translate(line, domain=oracle, predictor=predictor))
    sys.stdout.flush()
    return 0


def _cmd_train_classifier(args, config):
    data = _resolve(args, config, "data", required=True)
    vocab_path = _resolve(args, config, "vocab", required=True)
    out = _resolve(args, config, "out", required=True)
    domains = _resolve(args, config, "domains")
    cls_dims = dict(
        embed_dim=_resolve(args, config, "embed_dim", 32, int),
        hidden_dim=_resolve(args, config, "hidden_dim", 32, int),
        num_layers=_resolve(args, config, "layers", 1, int),
    )
    cfg = TrainConfig(
        batch_size=_resolve(args, config, "batch_size", 64, int),
        epochs=_resolve(args, config, "epochs", 10, int),
        lr0=_resolve(args, config, "lr", 1.0, float),
        decay_factor=_resolve(args, config, "decay_factor", 0.5, float),
        decay_start_epoch=_resolve(args, config, "decay_start", 6, int),
        gradient_clip_norm=_resolve(args, config, "clip", 5.0, float),
        seed=_resolve(args, config, "seed", 1, int),
    )
    _config_done(config)
    rows = read_labeled_corpus(data)
    tags = _domain_tags(rows, domains)
    vocab = Vocabulary.load(vocab_path, tags=tags)
    data_pairs = [
        ([vocab.lookup(t) for t in src.split()], tags.tag_id(d)) for d, src, _ in rows
    ]
    cls_config = ClassifierConfig(vocab=vocab, tags=tags, **cls_dims)
    params, _ = train_classifier(data_pairs, cfg, cls_config, progress=sys.stdout)
    report = evaluate_classifier(params, data_pairs)
    save_classifier(params, cls_config, out)
    print(f"training accuracy {100.0 * report.overall:.2f}%; saved to {out}", file=sys.stderr)
    return 0


def _cmd_classify(args, config):
    classifier_path = _resolve(args, config, "classifier", required=True)
    bpe_path = _resolve(args, config, "bpe")
    _config_done(config)
    predictor = DomainPredictor.load(classifier_path, bpe_path)
    for line in sys.stdin:
        line = line.rstrip("\n")
        if not line.strip():
            print("")
            print("warning: empty input line passed through", file=sys.stderr)
            continue
        print(predictor.predict(line))
    return 0


def _cmd_bleu(args, config):
    ref_path = _resolve(args, config, "ref", required=True)
    hyp_path = _resolve(args, config, "hyp")
    _config_done(config)
    refs = read_text_corpus(ref_path)
    hyps = read_text_corpus(hyp_path) if hyp_path else [l.rstrip("\n") for l in sys.stdin]
    report = bleu_score(hyps, refs)
    print(report)
    return 0


_EXPERIMENT_KEYS = {
    "test_data",
    "bpe",
    "configs",
    "conditions",
    "classifier",
    "lexicon",
    "out",
}


def _cmd_experiment(args, config):
    spec_path = _resolve(args, config, "spec", required=True)
    _config_done(config)
    spec = _parse_config_file(spec_path)
    single_keys = [k for k in spec if k.startswith("model.single.")]
    model_keys = {f"model.{m}" for m in ("join", "token", "feature")}
    unknown = set(spec) - _EXPERIMENT_KEYS - model_keys - set(single_keys)
    if unknown:
        raise UsageError(f"unknown experiment keys: {', '.join(sorted(unknown))}")
    test_data = spec.get("test_data")
    if not test_data:
        raise UsageError("experiment spec needs test_data")
    bpe_path = spec.get("bpe")
    configs = [c.strip() for c in spec.get("configs", "join,feature").split(",")]
    conditions = [c.strip() for c in spec.get("conditions", "oracle").split(",")]
    rows = read_labeled_corpus(test_data)
    test_sets = {}
    for d, src, tgt in rows:
        test_sets.setdefault(d, []).append((src, tgt))
    systems = {}
    for name in configs:
        if name == "single":
            per_domain = {}
            for key in single_keys:
                per_domain[key[len("model.single.") :]] = Translator.load(spec[key], bpe_path)
            systems["single"] = per_domain
        elif name in ("join", "token", "feature"):
            key = f"model.{name}"
            if key not in spec:
                raise UsageError(f"experiment spec is missing {key} for configuration {name!r}")
            systems[name] = Translator.load(spec[key], bpe_path)
        else:
            raise UsageError(f"unknown configuration {name!r} in experiment spec")
    classifier = None
    if "rnn" in conditions:
        if "classifier" not in spec:
            raise UsageError("the rnn condition requires a classifier path in the spec")
        classifier = DomainPredictor.load(spec["classifier"], bpe_path)
    lexicon = None
    if "lexicon" in spec:
        lexicon, _ = load_lexicon(spec["lexicon"])
    table = run_experiment(
        test_sets, systems, conditions=conditions, classifier=classifier, lexicon=lexicon
    )
    output = table.to_tsv("bleu")
    if lexicon:
        output += "\n# ambiguous-word accuracy\n" + table.to_tsv("ambiguous")
    if spec.get("out"):
        with open(spec["out"], "w", encoding="utf-8") as f:
            f.write(output)
    sys.stdout.write(output)
    return 0


def _cmd_cross_matrix(args, config):
    model_path = _resolve(args, config, "model", required=True)
    bpe_path = _resolve(args, config, "bpe")
    test_path = _resolve(args, config, "test", required=True)
    lexicon_path = _resolve(args, config, "lexicon")
    _config_done(config)
    translator = Translator.load(model_path, bpe_path)
    rows = read_labeled_corpus(test_path)
    test_sets = {}
    for d, src, tgt in rows:
        test_sets.setdefault(d, []).append((src, tgt))
    lexicon = None
    if lexicon_path:
        lexicon, _ = load_lexicon(lexicon_path)
    matrix = cross_domain_matrix(translator, test_sets, lexicon=lexicon)
    sys.stdout.write(matrix.to_tsv())
    if matrix.ambiguous_grid is not None:
        sys.stdout.write("\n# ambiguous-word accuracy\nrow_domain\tcol_tag\taccuracy\n")
        for i, row_d in enumerate(matrix.domains):
            for j, col_d in enumerate(matrix.domains):
                sys.stdout.write(f"{row_d}\t{col_d}\t{matrix.ambiguous_grid[i, j]:.4f}\n")
    return 0


# ---------------------------------------------------------------------------
# Parser assembly


def _add(sub, name, handler, options, help_text):
    p = sub.add_parser(name, help=help_text)
    p.add_argument("--config", help="key = value configuration file; flags win")
    for flags, kwargs in options:
        p.add_argument(*flags, **kwargs)
    p.set_defaults(func=handler)
    return p


def build_parser():
    parser = _Parser(prog="dcnmt", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="SUBCOMMAND")
    opt = lambda *flags, **kw: (flags, kw)

    _add(sub, "gen-corpus", _cmd_gen_corpus, [
        opt("--out"),
        opt("--domains", help="comma-separated tag surfaces, e.g. @MED@,@IT@"),
        opt("--sentences", type=int),
        opt("--shared-vocab", type=int),
        opt("--domain-vocab", type=int),
        opt("--ambiguous", type=int),
        opt("--min-len", type=int),
        opt("--max-len", type=int),
        opt("--seed", type=int),
    ], "generate a synthetic multi-domain parallel corpus")

    _add(sub, "learn-bpe", _cmd_learn_bpe, [
        opt("--data"),
        opt("--plain", action="store_const", const=True, default=None,
            help="treat --data as one sentence per line instead of a labeled TSV"),
        opt("--merges", type=int),
        opt("--out"),
    ], "learn byte-pair merges over a corpus")

    _add(sub, "preprocess", _cmd_preprocess, [
        opt("--data"),
        opt("--bpe"),
        opt("--mode", choices=MODES),
        opt("--out"),
        opt("--vocab-out"),
        opt("--vocab-size", type=int),
        opt("--domains"),
    ], "apply BPE and mode-specific domain annotation; emit the vocabulary")

    _add(sub, "train", _cmd_train, [
        opt("--data"),
        opt("--vocab"),
        opt("--mode", choices=MODES),
        opt("--out"),
        opt("--checkpoint-dir"),
        opt("--domains"),
        opt("--filter-domain"),
        opt("--word-dim", type=int),
        opt("--feature-dim", type=int),
        opt("--hidden-dim", type=int),
        opt("--layers", type=int),
        opt("--dropout", type=float),
        opt("--max-decode-len", type=int),
        opt("--batch-size", type=int),
        opt("--epochs", type=int),
        opt("--lr", type=float),
        opt("--decay-factor", type=float),
        opt("--decay-start", type=int),
        opt("--clip", type=float),
        opt("--seed", type=int),
    ], "train a translation model")

    _add(sub, "translate", _cmd_translate, [
        opt("--model"),
        opt("--bpe"),
        opt("--domain", help="tag surface for the oracle condition, or 'auto'"),
        opt("--classifier"),
    ], "translate stdin to stdout, one sentence per line")

    _add(sub, "train-classifier", _cmd_train_classifier, [
        opt("--data"),
        opt("--vocab"),
        opt("--out"),
        opt("--domains"),
        opt("--embed-dim", type=int),
        opt("--hidden-dim", type=int),
        opt("--layers", type=int),
        opt("--batch-size", type=int),
        opt("--epochs", type=int),
        opt("--lr", type=float),
        opt("--decay-factor", type=float),
        opt("--decay-start", type=int),
        opt("--clip", type=float),
        opt("--seed", type=int),
    ], "train the sentence-level domain classifier")

    _add(sub, "classify", _cmd_classify, [
        opt("--classifier"),
        opt("--bpe"),
    ], "predict a domain tag per stdin line")

    _add(sub, "bleu", _cmd_bleu, [
        opt("--ref"),
        opt("--hyp", help="hypothesis file; defaults to stdin"),
    ], "score hypotheses against references")

    _add(sub, "experiment", _cmd_experiment, [
        opt("--spec"),
    ], "evaluate trained systems per domain and emit the comparison table")

    _add(sub, "cross-matrix", _cmd_cross_matrix, [
        opt("--model"),
        opt("--bpe"),
        opt("--test"),
        opt("--lexicon"),
    ], "translate every domain's test set under every tag")

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "func", None) is None:
            parser.print_usage(sys.stderr)
            return 1
        config = _parse_config_file(args.config) if getattr(args, "config", None) else {}
        return args.func(args, config) or 0
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return 1
    except (OSError, ModelFileError, NumericError, ValueError, KeyError) as e:
        print(f"dcnmt: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
