"""Desk-scale neural machine translation with runtime domain control.

A from-scratch numpy toolkit: bidirectional-LSTM encoder with summed
outputs, global-attention LSTM decoder, two domain-control mechanisms
(an appended domain token, or domain-feature cells concatenated onto
every source word embedding), a sentence-level domain classifier, BLEU
scoring, and a deterministic synthetic-corpus benchmark.
"""

from .numeric import (
    NumericError,
    Parameter,
    LstmCell,
    ShapeError,
    dropout,
    grad_check,
    init_lstm_cell,
    lstm_step,
    make_rng,
    matmul,
    run_lstm_stack,
    softmax,
)
from .text import (
    AnnotatedPair,
    BpeModel,
    DomainTagSet,
    TagCollisionError,
    Vocabulary,
    annotate_features,
    apply_bpe,
    build_vocab,
    detokenize,
    inject_token,
    learn_bpe,
    make_pairs,
)
from .model import (
    AttentionResult,
    EncoderOutputs,
    ModelConfig,
    ModelParams,
    attend,
    batch_loss,
    batch_loss_and_grad,
    decode_step,
    embed_source,
    encode,
    greedy_decode,
    init_decoder_state,
    load_model,
    save_model,
)
from .serialize import (
    BadMagicError,
    ModelFileError,
    TensorShapeError,
    TruncatedFileError,
)
from .training import (
    Batch,
    EpochReport,
    TrainConfig,
    lr_schedule,
    make_batches,
    resume_training,
    train,
)
from .classifier import (
    ClassifierConfig,
    ClassifierParams,
    classify,
    evaluate_classifier,
    load_classifier,
    save_classifier,
    train_classifier,
)
from .evaluation import (
    BleuReport,
    CrossDomainMatrix,
    ExperimentTable,
    ambiguous_accuracy,
    bleu,
    cross_domain_matrix,
    run_experiment,
)
from .pipeline import DomainPredictor, Translator
from .synthetic import CorpusSpec, SyntheticCorpus, generate, load_lexicon

__version__ = "0.1.0"
