"""Dual-generator text style transfer without discriminators or parallel data."""

import os

# Desk-scale matrices: BLAS thread fan-out costs more than it buys.
# Must be set before numpy's first import to take effect.
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

from .corpus import (
    Sentence,
    StyleCorpus,
    Vocab,
    build_vocab,
    load_corpus,
    load_style_corpus,
)
from .editops import (
    NoiseSpec,
    apply_edits,
    edit_distance,
    folded_normal_draws,
    neighbourhood_sample,
    new_rng,
    sample_edit_fraction,
)
from .evaluation import (
    MetricsReport,
    NgramClassifier,
    bleu,
    evaluate_system,
    ngram_precisions,
    train_classifier,
)
from .params import ParamStore, adam_step, load_params, save_params
from .seq2seq import GenerationConfig, Seq2SeqConfig, Transferrer, load_transferrer
from .training import (
    TrainConfig,
    TrainResult,
    gamma_for_epoch,
    make_synthetic_corpus,
    save_pair_checkpoint,
    train_dgst,
    write_synthetic_dataset,
)

__version__ = "0.1.0"
