import numpy as np
import pytest

from engine import context
from intake.synthetic import planted_block_lda, planted_lda, planted_multinomial_mixture


@pytest.fixture(autouse=True)
def project_dir(tmp_path):
    """Point state/ and TRACE.json at a throwaway directory for every test."""
    context.init(tmp_path)
    yield tmp_path
    context.init(None)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_corpus():
    """Planted 4-topic corpus: 20 documents over 50 words."""
    planted = planted_lda(20, 50, 30, 4, np.random.default_rng(7), alpha=0.1)
    return planted.corpus


@pytest.fixture
def lda_corpus():
    """The 50-document, 200-word, 8-topic corpus used for trend checks."""
    planted = planted_lda(50, 200, 80, 8, np.random.default_rng(11), alpha=0.1)
    return planted.corpus


@pytest.fixture
def mixture_data():
    planted = planted_multinomial_mixture(60, 30, 40, 3, np.random.default_rng(5))
    return planted


@pytest.fixture
def separated_corpus():
    """Planted 8-topic corpus on disjoint word blocks: 60 documents over 160 words."""
    planted = planted_block_lda(60, 160, 100, 8, np.random.default_rng(13))
    return planted.corpus
