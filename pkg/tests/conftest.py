import pathlib

import pytest

from qgen.preprocess import GazetteerTagger, default_data_path, load_stopwords
from qgen.squad import bucket_by_length, invert, load_squad
from qgen.wordpiece import load_vocabulary

DATA_DIR = pathlib.Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def vocab():
    return load_vocabulary(default_data_path("vocab.txt"))


@pytest.fixture(scope="session")
def tagger():
    return GazetteerTagger.from_tsv(default_data_path("gazetteer.tsv"))


@pytest.fixture(scope="session")
def stoplist():
    return load_stopwords(default_data_path("stopwords.txt"))


@pytest.fixture(scope="session")
def squad_path():
    return DATA_DIR / "squad_tiny.json"


@pytest.fixture(scope="session")
def records(squad_path):
    return load_squad(squad_path)


@pytest.fixture(scope="session")
def examples(records, tagger, stoplist, vocab):
    return invert(records, tagger, stoplist, vocab)


@pytest.fixture(scope="session")
def buckets(examples):
    return bucket_by_length(examples)
