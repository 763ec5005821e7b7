"""
Tests for the finite-difference gradient harness
"""

import numpy as np
import pytest

from config.settings import LOSS_IDS
from relgraph.errors import UsageError
from relgraph.gradcheck import TOLERANCE, gradcheck, relative_error


def test_relative_error_floor():
    err = relative_error(np.array([1e-6, 2.0]), np.array([0.0, 2.0]))
    assert err[0] == pytest.approx(1e-3)
    assert err[1] == 0.0
    print("✅ test_relative_error_floor passed")


@pytest.mark.parametrize("loss", LOSS_IDS)
def test_every_loss_passes_at_desk_dims(loss):
    report = gradcheck(loss, seed=0)
    assert report.passed, report.worst
    names = {g.name for g in report.groups}
    assert {"rgm.W1", "rgm.We", "rgm.W2", "rgm.Wfc", "rgm.bfc", "nau.Wa", "nau.Wb"} <= names
    if loss != "triplet-cond":
        assert "cls.W" in names


@pytest.mark.parametrize("kind", ["linear", "extra", "rm", "rgm"])
def test_other_heads_pass(kind):
    report = gradcheck("softmax", seed=1, kind=kind, nodes=4, channels=3)
    assert report.passed, report.worst


def test_softmax_edges_pass():
    report = gradcheck("csoftmax", seed=2, nodes=9, edge_activation="softmax")
    assert report.passed, report.worst
    print("✅ test_softmax_edges_pass passed")


@pytest.mark.parametrize("loss,seed", [("csoftmax", 1), ("cosface", 8)])
def test_high_curvature_seeds_pass(loss, seed):
    """Test seeds whose unscaled projection left truncation error above tolerance"""
    report = gradcheck(loss, seed=seed)
    assert report.passed, report.worst
    fc = next(g for g in report.groups if g.name == "rgm.Wfc")
    assert fc.max_rel_error < TOLERANCE
    print(f"✅ test_high_curvature_seeds_pass[{loss}-{seed}] passed")


def test_corrupted_group_is_caught():
    report = gradcheck("csoftmax", seed=0, nodes=4, corrupt_group="nau.Wa")
    assert not report.passed
    failed = [g.name for g in report.groups if not g.passed]
    assert failed == ["nau.Wa"]
    print("✅ test_corrupted_group_is_caught passed")


def test_usage_errors():
    with pytest.raises(UsageError):
        gradcheck("csoftmax", batch=0)
    with pytest.raises(UsageError):
        gradcheck("csoftmax", nodes=10)
    with pytest.raises(UsageError):
        gradcheck("csoftmax", nodes=4, corrupt_group="nope")
    print("✅ test_usage_errors passed")


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(10))
@pytest.mark.parametrize("loss", ["nsoftmax", "csoftmax", "cosface", "arcface", "triplet-cond"])
def test_full_head_over_ten_seeds(loss, seed):
    assert gradcheck(loss, seed=seed).passed
