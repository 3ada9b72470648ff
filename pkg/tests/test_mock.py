import math

import numpy as np
import pytest

from gdec import simulator
from gdec.errors import ConfigError
from gdec.mock import MockScenario, open_mock_session

from conftest import onehot


def test_uniform_scenario_frames():
    session = open_mock_session(seed=1, vocab_size=8, scenario=MockScenario.uniform())
    for flag in (True, False):
        vec = session.frame_for([0], flag)
        assert np.all(vec == -math.log(8))


def test_determinism_contract_bitwise():
    session = open_mock_session(seed=1, vocab_size=8, scenario=MockScenario.uniform())
    a = session.frame_for([0], True)
    b = session.frame_for([0], True)
    assert np.array_equal(a, b)
    fading = open_mock_session(seed=9, vocab_size=16, scenario=MockScenario.fading(0.02))
    a = fading.frame_for([0, 5, 3], True).copy()
    b = fading.frame_for([0, 5, 3], True)
    assert np.array_equal(a, b)


def test_fading_t0_conditioned_matches_simulator_oracle():
    session = open_mock_session(seed=2, vocab_size=64, scenario=MockScenario.fading(lambda_star=0.02))
    conditioned = session.frame_for([0], True)
    _, oracle = simulator.frame_at(session.sim_spec, [0], 0)
    assert np.array_equal(conditioned, oracle)


def test_fixed_table_reuses_last_row():
    scenario = MockScenario.fixed_table([onehot(4, 2), onehot(4, 3)], [onehot(4, 2)])
    session = open_mock_session(seed=0, vocab_size=4, scenario=scenario)
    assert np.argmax(session.frame_for([0], True)) == 2
    assert np.argmax(session.frame_for([0, 2], True)) == 3
    assert np.argmax(session.frame_for([0, 2, 3], True)) == 3  # clamped
    assert np.argmax(session.frame_for([0, 2, 3], False)) == 2


def test_scenario_round_trip():
    for scenario in (
        MockScenario.uniform(),
        MockScenario.fading(lambda_star=0.07, grounded_fraction=0.5, noise_sigma=0.1),
        MockScenario.fixed_table([onehot(3, 1)], [onehot(3, 2)]),
    ):
        assert MockScenario.from_dict(scenario.to_dict()) == scenario


@pytest.mark.parametrize(
    "descriptor",
    [
        {"kind": "nope"},
        {"kind": "fixed_table"},  # missing tables
        {"kind": "uniform", "extra": 1},
        {"kind": "fading", "lambda_star": -0.1},
        {},
    ],
)
def test_invalid_scenario_descriptor(descriptor):
    with pytest.raises(ConfigError):
        MockScenario.from_dict(descriptor)


def test_fixed_table_row_length_must_match_vocab():
    scenario = MockScenario.fixed_table([onehot(4, 2)], [onehot(4, 2)])
    with pytest.raises(ConfigError):
        open_mock_session(seed=0, vocab_size=8, scenario=scenario)


def test_vocab_size_minimum():
    with pytest.raises(ConfigError):
        open_mock_session(seed=0, vocab_size=1, scenario=MockScenario.uniform())


def test_open_mock_session_accepts_raw_descriptor():
    session = open_mock_session(seed=0, vocab_size=4, scenario={"kind": "uniform"})
    assert session.descriptor.model_name == "mock:uniform"


def test_negative_seeds_are_legal():
    session = open_mock_session(seed=-17, vocab_size=16, scenario=MockScenario.fading(0.02))
    vec = session.frame_for([0], True)
    assert np.isfinite(vec).all()
    spec = simulator.SimSpec(vocab_size=16, image_seed=-5, prior_seed=-9)
    frame, _ = simulator.frame_at(spec, [0], 3)
    assert np.isfinite(frame.conditioned).all()
