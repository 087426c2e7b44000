import numpy as np
import pytest

from mrlabel.synthetic import GeneratorConfig, generate_synthetic_corpus
from mrlabel.tokenizer import build_vocab


@pytest.fixture(scope="session")
def small_corpus():
    return generate_synthetic_corpus(GeneratorConfig(n_reports=120, misparse_rate=0.2, seed=5))


@pytest.fixture(scope="session")
def small_vocab(small_corpus):
    return build_vocab(small_corpus, 300)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
