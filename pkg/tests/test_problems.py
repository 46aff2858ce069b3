import numpy as np
import pytest

from ifesolve.problems import available_problems, check_manufactured, get_problem, interface_points


@pytest.mark.parametrize("name", ["example1", "example3d", "continuous", "patch", "zero"])
def test_manufactured_data_consistent(name):
    spec = get_problem(name, 1000.0, 1.0, check=False)
    res = check_manufactured(spec)  # raises on inconsistent data
    assert res["g_N"] < 1e-8 and res["g_D"] < 1e-8


def test_registry_lists_builtins():
    assert {"example1", "example3d", "patch", "zero", "continuous"} <= set(available_problems())
    with pytest.raises(KeyError):
        get_problem("no-such-problem")


def test_interface_points_on_zero_set():
    spec = get_problem("example1")
    x = interface_points(spec, 50)
    assert np.abs(spec.levelset.phi(x)).max() < 1e-12


def test_coefficients_spd_and_scaled():
    spec = get_problem("example1", 1000.0, 1.0)
    x = np.random.default_rng(0).uniform(-1, 1, (20, 2))
    (lo_p, hi_p), (lo_m, hi_m) = spec.levelset.check_coefficients(x)
    assert lo_p > 0 and lo_m > 0
    assert hi_p / hi_m > 100
