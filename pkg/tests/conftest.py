import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from streamscribe import _kernels


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    # JIT compilation must not be charged to timed tests.
    _kernels.warmup()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_samples(n: int, amplitude: float = 0.3, seed: int = 0) -> np.ndarray:
    gen = np.random.default_rng(seed)
    return gen.uniform(-amplitude, amplitude, size=n).astype(np.float32)


@pytest.fixture
def mock_backend_cmd():
    def build(*args: str) -> list[str]:
        return [sys.executable, "-m", "streamscribe.mock_backend", *args]

    return build
