import numpy as np
import pytest

from morphseq.data import InflectionExample, build_vocabs, encode_batch
from morphseq.models import JointModel


TINY_EXAMPLES = [
    InflectionExample("kato", "katojn", ("N", "PL", "ACC")),
    InflectionExample("hundo", "hundoj", ("N", "PL")),
    InflectionExample("birdi", "birdas", ("V", "PRS")),
    InflectionExample("kanti", "kantis", ("V", "PST")),
    InflectionExample("domo", "domon", ("N", "SG", "ACC")),
    InflectionExample("v", "vi", ("V", "FUT")),
]


@pytest.fixture(scope="session")
def tiny_examples():
    return list(TINY_EXAMPLES)


@pytest.fixture(scope="session")
def tiny_vocabs(tiny_examples):
    return build_vocabs(tiny_examples)


@pytest.fixture()
def tiny_model(tiny_vocabs):
    cv, fv = tiny_vocabs
    return JointModel(cv, fv, hidden_size=8, rng=np.random.default_rng(5))


@pytest.fixture()
def tiny_batch(tiny_examples, tiny_vocabs):
    cv, fv = tiny_vocabs
    return encode_batch(tiny_examples, cv, fv)


def make_check_model(hidden_size=4, seed=1, scale=1.5):
    """A float64 toy model whose weights are rescaled so every gradient path
    is active: gradient entries then sit far above the finite-difference
    noise floor, making eps=1e-5 central differences a meaningful oracle."""
    examples = [InflectionExample("ab", "ba", ("X", "Y"))]
    cv, fv = build_vocabs(examples)
    model = JointModel(
        cv, fv, hidden_size=hidden_size, rng=np.random.default_rng(seed), dtype=np.float64
    )
    for name, p in model.parameters().items():
        if not name.endswith(".b"):
            p.data = p.data * (scale / 0.1)
    batch = encode_batch(examples, cv, fv, dtype=np.float64)
    return model, batch
