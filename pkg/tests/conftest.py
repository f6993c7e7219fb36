import numpy as np
import pytest

from uanll.ndmath import TwoHeadMlp, init_model

# gradient agreement: relative error below 1e-5, absolute floor 1e-8
REL_TOL = 1e-5
ABS_FLOOR = 1e-8


def assert_grads_close(analytic, numeric, rel=REL_TOL, floor=ABS_FLOOR):
    for a, b in zip(analytic.arrays(), numeric.arrays()):
        diff = np.abs(a - b)
        scale = np.maximum(np.abs(a), np.abs(b))
        bad = (diff > floor) & (diff > rel * scale)
        assert not np.any(bad), f"gradient mismatch: max abs diff {diff.max()}"


def random_model(rng, n_inputs=5, hidden=(8, 6), n_classes=3, activation="tanh"):
    return init_model(
        [n_inputs] + list(hidden), n_classes, activation=activation,
        seed=int(rng.integers(0, 2**31)),
    )


def zero_model(n_inputs, n_classes, trunk=4, var_bias=0.0) -> TwoHeadMlp:
    return TwoHeadMlp(
        trunk_weights=[np.zeros((trunk, n_inputs))],
        trunk_biases=[np.zeros(trunk)],
        class_w=np.zeros((n_classes, trunk)),
        class_b=np.zeros(n_classes),
        var_w=np.zeros((1, trunk)),
        var_b=np.array([var_bias]),
    )


def random_simplex(rng, n):
    v = rng.dirichlet(np.ones(n))
    return v / v.sum()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
