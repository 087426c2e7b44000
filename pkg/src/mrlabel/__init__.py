"""Weak labels for bilingual breast-imaging reports.

A small Transformer encoder is pretrained with domain-weighted masked
language modelling, then fine-tuned to predict biopsy outcome or BI-RADS
score.  Everything runs on CPU with numpy.
"""

from .corpus import Corpus, Report, class_weights, load_corpus, save_corpus, stratified_kfold
from .encoder import EncoderConfig, encode, init_params
from .errors import DataError, FoldError, NumericError, StratificationWarning
from .synthetic import GeneratorConfig, generate_synthetic_corpus
from .tokenizer import Vocab, build_vocab, tokenize

__version__ = "0.1.0"

__all__ = [
    "Corpus", "Report", "class_weights", "load_corpus", "save_corpus", "stratified_kfold",
    "EncoderConfig", "encode", "init_params",
    "DataError", "FoldError", "NumericError", "StratificationWarning",
    "GeneratorConfig", "generate_synthetic_corpus",
    "Vocab", "build_vocab", "tokenize",
]
