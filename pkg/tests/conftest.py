"""Shared fixtures: the reference parameter set and its known premiums."""

import numpy as np
import pytest

from optliq import ModelParams

# Reference fixture: T = 300 s, mu = 0, sigma = 0.3, A = 0.1, k = 0.3,
# gamma = 0.05, b = 3, inventory up to 6.  The time-0 premiums per starting
# inventory are externally tabulated to 5-6 significant digits.
REFERENCE_QUOTES_T0 = np.array(
    [10.6095, 7.8737, 6.1299, 4.8082, 3.728, 2.8073])

# time-0 premiums under single-parameter changes from the reference fixture
SWEEP_QUOTES_T0 = {
    ("mu", -0.01): [9.2252, 6.581, 4.92, 3.6732, 2.6607, 1.8012],
    ("mu", 0.01): [12.2329, 9.3921, 7.5507, 6.1391, 4.9765, 3.9806],
    ("sigma", 0.0): [10.9538, 8.6482, 7.3019, 6.3486, 5.6109, 5.0097],
    ("sigma", 0.6): [9.6493, 6.0262, 3.6874, 1.9455, 0.55671, -0.59773],
    ("big_a", 0.05): [8.4128, 5.6704, 3.9199, 2.5917, 1.5051, 0.57851],
    ("big_a", 0.15): [11.9222, 9.1898, 7.4491, 6.1302, 5.0525, 4.1341],
    ("k", 0.2): [15.8107, 11.9076, 9.4656, 7.6334, 6.1436, 4.8761],
    ("k", 0.4): [7.941, 5.7972, 4.4144, 3.3618, 2.5011, 1.7688],
    ("b", 0.0): [10.7743, 8.0304, 6.278, 4.9477, 3.859, 2.9301],
    ("b", 20.0): [10.4924, 7.7685, 6.0353, 4.7229, 3.6509, 2.7374],
    ("gamma", 0.01): [11.2809, 8.8826, 7.4447, 6.4008, 5.5735, 4.8835],
}

# same fixture with sigma = 3, swept over k (heavy price risk, mostly
# negative premiums)
HIGH_VOL_K_SWEEP = {
    0.2: [2.8768, -4.0547, -8.1093, -10.9861, -13.2176, -15.0408],
    0.3: [0.79631, -3.8247, -6.5278, -8.4457, -9.9333, -11.1488],
    0.4: [-0.031056, -3.4968, -5.5241, -6.9625, -8.0782, -8.9899],
}

TABLE_TOL = 5e-4  # last printed digit of the tabulated premiums


@pytest.fixture
def ref_params() -> ModelParams:
    return ModelParams()


@pytest.fixture
def nodrift_params() -> ModelParams:
    return ModelParams(mu=0.0, sigma=0.0)
