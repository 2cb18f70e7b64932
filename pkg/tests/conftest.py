import numpy as np
import pytest

from prosper import scenarios
from prosper.dose import PlanConstraints, plan_seeds
from prosper.shape import default_shape_model


@pytest.fixture(scope="session")
def shape_model():
    return default_shape_model()


@pytest.fixture(scope="session")
def reference_bundle():
    return scenarios.load_scenario("reference")


@pytest.fixture(scope="session")
def reference_plan(reference_bundle):
    b = reference_bundle
    return plan_seeds(b.target, b.arch, b.dose_params, mode="grid", rng_seed=2026)


@pytest.fixture(scope="session")
def small_plan(reference_bundle):
    """Cut-down plan for simulator tests that do not need full coverage."""
    b = reference_bundle
    return plan_seeds(b.target, b.arch, b.dose_params, mode="grid",
                      constraints=PlanConstraints(max_seeds=10), rng_seed=2026)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
