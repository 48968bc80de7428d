import numpy as np
import pytest

from cocodlab import algorithms as alg
from cocodlab import model


def make_problem(
    n=2,
    dim=3,
    per_worker=16,
    caps=None,
    base_batch=4,
    seed=7,
    spread=1.0,
    offset=0.5,
    proportional=True,
    full_batch=False,
    momentum=0.0,
):
    """Quadratic problem on a synthetic Gaussian dataset, shards sized by capability."""
    caps = tuple(caps) if caps is not None else (1.0,) * n
    total = int(per_worker * sum(caps) / min(caps))
    sizes = model.largest_remainder(total, caps)
    data = model.generate_dataset(seed, dim, sizes, model.shard_offsets(len(caps), dim, offset), spread)
    part = model.partition_proportional(data, caps, base_batch, proportional)
    return alg.Problem(model.QuadraticObjective(data), part, seed, full_batch, momentum)


def identical_shard_problem(n=3, dim=4, per_worker=5, seed=3):
    """Every worker holds the same points, so full-batch gradients agree everywhere."""
    rng = np.random.default_rng(seed)
    block = rng.standard_normal((per_worker, dim))
    data = model.Dataset(np.concatenate([block] * n))
    part = model.partition_proportional(data, (1.0,) * n, per_worker)
    return alg.Problem(model.QuadraticObjective(data), part, seed, full_batch=True)


@pytest.fixture
def problem():
    return make_problem()
