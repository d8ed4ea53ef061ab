"""The finite-difference suite itself: it must pass on clean gradients,
catch a deliberately skewed gradient, and reject unknown op names."""

import time

import pytest

from featsim.errors import ConfigError
from featsim.gradcheck import CHECKS, TOLERANCE, check_op, run_all


def test_all_ops_pass_on_two_seeds():
    report, ok = run_all(seeds=(0, 1))
    assert ok
    assert len(report) == len(CHECKS)
    for name, worst, passed in report:
        assert passed, f"{name}: rel err {worst:.2e}"
        assert worst <= TOLERANCE


def test_expected_op_coverage():
    # criterion list: conv, relu, pooling, upsample, nearest resize, softmax,
    # dice loss, full fsm forward, plus the composite net check
    for op in ("conv3x3", "conv1x1", "relu", "maxpool2x2", "upsample2x",
               "nearest_resize", "channel_softmax", "dice_loss",
               "fsm_forward", "unet_dice"):
        assert op in CHECKS


def test_corrupted_gradient_is_caught():
    report, ok = run_all(seeds=(0,), corrupt="conv3x3")
    assert not ok
    by_name = {name: (worst, passed) for name, worst, passed in report}
    assert not by_name["conv3x3"][1]
    assert by_name["conv3x3"][0] > TOLERANCE
    # the corruption hook must not leak into other ops
    assert by_name["relu"][1]


def test_unknown_corrupt_target_rejected():
    with pytest.raises(ConfigError):
        run_all(seeds=(0,), corrupt="not_an_op")


def test_check_op_deterministic():
    a = check_op("conv3x3", seed=4)
    b = check_op("conv3x3", seed=4)
    assert a == b


def test_single_seed_runtime_budget():
    t0 = time.time()
    run_all(seeds=(2,))
    assert time.time() - t0 < 24.0   # five seeds must fit the 2 min budget
