import numpy as np
import pytest

from rdcontrol.cascade import make_transform
from rdcontrol.lebeau_robbiano import uncontrollable_mask
from rdcontrol.reaction import ReactionNetwork
from rdcontrol.spectral import SpectralDomain, linear_operator

SWAP = dict(alpha=(1, 0, 1, 0), beta=(0, 1, 0, 1), d=(1.0, 2.0, 3.0, 4.0))


@pytest.fixture(scope="session")
def two_control_net():
    return ReactionNetwork(4, 2, **SWAP)


@pytest.fixture(scope="session")
def one_control_net():
    return ReactionNetwork(4, 1, **SWAP)


@pytest.fixture(scope="session")
def two_control(two_control_net):
    tr = make_transform(two_control_net, np.ones(4))
    dom = SpectralDomain.for_degree(1.0, 16, (0.3, 0.7), two_control_net.gamma)
    return two_control_net, tr, dom, linear_operator(dom, tr)


@pytest.fixture(scope="session")
def one_control(one_control_net):
    tr = make_transform(one_control_net, np.ones(4))
    dom = SpectralDomain.for_degree(1.0, 16, (0.3, 0.7), one_control_net.gamma)
    return one_control_net, tr, dom, linear_operator(dom, tr)


def random_linv(n, m, K, seed):
    z = np.random.default_rng(seed).standard_normal((n, K))
    z[uncontrollable_mask(n, m, K)] = 0.0
    return z
