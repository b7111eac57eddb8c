import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from feeflow import ModelParams


@pytest.fixture
def scalar_mp():
    """Small well-conditioned one-resource model."""
    return ModelParams(
        n=1,
        A_d=[[0.8]], mu_d=[10.0], W_d=[[0.5]],
        A_B=[[0.9]], mu_B=[-2.0], W_B=[[0.05]],
        W_dB=[[-0.05]],
        W_y=[[0.4]], t=[9.0], lam=0.0,
    )


@pytest.fixture
def table1_mp():
    """One-resource model at the published gas-market MLE scale."""
    return ModelParams(
        n=1,
        A_d=[[0.997]], mu_d=[7.30e7], W_d=[[1.04e6 ** 2]],
        A_B=[[0.998]], mu_B=[-2.38e-3], W_B=[[5.35e-5 ** 2]],
        W_dB=[[-0.548 * 1.04e6 * 5.35e-5]],
        W_y=[[7.21e6 ** 2]], t=[15e6], lam=1e-7,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
