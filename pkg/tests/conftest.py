import os

# keep BLAS single-threaded before numpy loads: deterministic and faster
# at the matrix sizes used here
for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(var, "1")

import numpy as np
import pytest

from dgst.corpus import Vocab


@pytest.fixture
def vocab():
    return Vocab([f"w{i}" for i in range(20)])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
