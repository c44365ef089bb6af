import numpy as np
import pytest

from spinopt.compare import CompareSettings, compare_arms
from spinopt.device import DistortionModel, NoiseModel
from spinopt.grape import GrapeConfig
from spinopt.mqfc import MqfcConfig
from spinopt.propagation import ControlPulse
from spinopt.spinsys import SpinSystem

SYS = SpinSystem([10.0, -25.0], [[0, 45.0], [45.0, 0]], [0, 1], [1.0, 1.0], np.inf, np.inf)


def _pulse():
    rng = np.random.default_rng(0)
    return ControlPulse(rng.uniform(-40, 40, (20, 2, 2)), 1e-3)


def _settings(**kw):
    return CompareSettings(
        grape=GrapeConfig(epsilon=1e5, max_iters=500, target_fitness=0.99999),
        mqfc=MqfcConfig(epsilon=1e5, max_iters=200, step_rule="quadratic",
                        target_fitness=0.99999),
        eval_repeats=1, **kw)


def test_transparent_device_arms_agree():
    res = compare_arms(SYS, DistortionModel(), NoiseModel(dephasing=False), _pulse(),
                       "ZI", "XZ", _settings())
    g, m = res["grape"]["device_fitness"], res["mqfc"]["device_fitness"]
    assert g > 0.999 and m > 0.999
    assert abs(g - m) < 1e-3
    # nothing hidden: the model value of the closed-loop pulse is what the device saw
    assert res["mqfc"]["final_model"] == pytest.approx(m, abs=1e-12)
    assert res["ceiling"]["realized_fitness"] == pytest.approx(m, abs=1e-12)


def test_distorted_device_report_shape():
    res = compare_arms(SYS, DistortionModel(amp_scale=0.9),
                       NoiseModel(readout_sigma=0.01, seed=2), _pulse(), "ZI", "XZ",
                       _settings(ceiling_iters=5))
    assert res["mqfc"]["budget"]["total"] == res["mqfc"]["device_experiments"] - 1
    assert len(res["grape"]["trace_model"]) >= 1
    assert res["margin"] == pytest.approx(res["mqfc"]["device_fitness"]
                                          - res["grape"]["device_fitness"])
    assert res["ceiling"]["value"] >= res["ceiling"]["realized_fitness"]
    assert res["task"]["M_opt"] == 20


def test_layout_mismatch():
    with pytest.raises(ValueError):
        compare_arms(SYS, DistortionModel(), NoiseModel(), ControlPulse.zeros(3, 1, 1e-3),
                     "ZI", "XZ")
    with pytest.raises(ValueError):
        compare_arms(SYS, DistortionModel(), NoiseModel(), _pulse(), "ZII", "XZ")
