import numpy as np
import pytest

from fragstop import expfun, levy, stopsolve

# Reference configuration: uniform binary splits at unit rate, all problem
# constants 1 except the start c, which sits inside the continuation region
# (the solved threshold is ~0.78).
REF_SEED = 42


@pytest.fixture(scope="session")
def ref_model():
    return levy.BinaryUniform(1.0)


@pytest.fixture(scope="session")
def ref_params(ref_model):
    return levy.make_params(ref_model, gamma=1.0, theta=1.0, q=1.0, c=0.25)


@pytest.fixture(scope="session")
def ref_sample(ref_model, ref_params):
    return expfun.draw_shared_sample(ref_model, ref_params, 100_000, seed=REF_SEED)


@pytest.fixture(scope="session")
def ref_solved(ref_model, ref_params, ref_sample):
    return stopsolve.solve_b_star(ref_model, ref_params, ref_sample, diagnostics=False)


@pytest.fixture(scope="session")
def degen_model():
    return levy.BinaryUniform(0.0)


@pytest.fixture(scope="session")
def degen_params(degen_model):
    return levy.make_params(degen_model, gamma=1.0, theta=1.0, q=1.0, c=0.25)


@pytest.fixture(scope="session")
def degen_sample(degen_params):
    return expfun.degenerate_sample(degen_params)


@pytest.fixture()
def rng():
    return np.random.default_rng(7)
