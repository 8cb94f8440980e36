import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from tvpnet.model import DynamicNetwork, EdgeCovariates, ModelConfig, ModelState


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def scalar_case(y=1.0, z=1.0, xj=1.0, omega=0.25):
    """V=2, N=1, H=1, P=1 state with everything else at zero."""
    net = DynamicNetwork(np.array([[y]]))
    covs = EdgeCovariates(np.array([[[z]]]))
    X = np.zeros((2, 1, 1))
    X[0, 0, 0] = xj
    state = ModelState(
        mu=np.zeros(1), X=X, beta=np.zeros((1, 1)), theta=np.ones(1), tau=np.ones(1),
        omega=np.array([[omega]]),
    )
    cfg = ModelConfig(H=1, n_iter=1, n_burn=0)
    return net, covs, state, cfg
