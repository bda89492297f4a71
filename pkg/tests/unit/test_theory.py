"""Unit tests for distillkit.theory."""
import math

import pytest
import torch

from distillkit.errors import ArgumentError
from distillkit.theory import VERIFIERS, PropDims, gradient_gap_bound, optimal_weights, verify_prop1, verify_prop2, verify_prop3


@pytest.mark.parametrize("proposition", [1, 2, 3])
def test_propositions_hold(proposition):
    """Test every identity holds on random instances."""
    report = VERIFIERS[proposition](trials=200)
    assert report.passed, report.summary()
    assert report.proposition == proposition
    assert len(report.digests) == 200
    assert len(set(report.digests)) == 200


def test_reports_independent_of_jobs():
    """Test parallel trials produce the same report."""
    assert verify_prop1(trials=50, jobs=4) == verify_prop1(trials=50)
    assert verify_prop3(trials=50, jobs=3) == verify_prop3(trials=50)


def test_seed_changes_instances():
    """Test another seed draws other instances."""
    assert verify_prop2(trials=5, seed=1).digests != verify_prop2(trials=5).digests


def test_prop1_needs_enough_real_samples():
    """Test the mapping needs at least as many real samples as features."""
    with pytest.raises(ArgumentError, match="N >= F"):
        verify_prop1(PropDims(features=8, real=4))


def test_prop1_operator_bound_has_slack():
    """Test the operator-norm bound is reported and never negative beyond round-off."""
    report = verify_prop1(trials=100)
    assert report.informational["operator_bound_slack"] >= -1e-9
    assert report.constant == 1.0


def test_prop2_random_weights_is_informational():
    """Test the equality is only asserted at zero weights."""
    report = verify_prop2(trials=50, weights="random")
    assert report.passed
    assert math.isinf(report.tolerance)
    assert report.max_violation > 1e-6
    assert verify_prop2(trials=50).constant == 4.0


def test_prop3_bound_and_tight_form():
    """Test the second-moment bound holds with zero tolerance and counts the tighter form."""
    report = verify_prop3(trials=200)
    assert report.tolerance == 0.0
    assert report.constant == 8.0
    assert 0.0 <= report.informational["tight_form_violations"] <= 200.0
    assert verify_prop3(trials=50, weights="zero").passed


def test_tolerance_override_can_fail():
    """Test a negative tolerance makes any report fail."""
    report = verify_prop1(trials=3, tol=-1.0)
    assert not report.passed
    assert "FAIL" in report.summary()


def test_optimal_weights_interpolate_few_samples():
    """Test the minimum-norm solution fits fewer samples than features exactly."""
    generator = torch.Generator().manual_seed(0)
    features = torch.randn(3, 5, generator=generator, dtype=torch.float64)
    labels = torch.eye(3, dtype=torch.float64)
    assert torch.allclose(features @ optimal_weights(features, labels), labels, atol=1e-10)


def test_bound_on_identical_sets():
    """Test identical synthetic and real sets have no gradient gap."""
    generator = torch.Generator().manual_seed(0)
    features = torch.randn(4, 3, generator=generator, dtype=torch.float64)
    labels = torch.eye(4, 2, dtype=torch.float64)
    weights = torch.randn(3, 2, generator=generator, dtype=torch.float64)
    lhs, rhs = gradient_gap_bound(features, labels, features, labels, weights)
    assert lhs == pytest.approx(0.0, abs=1e-20)
    assert rhs == pytest.approx(0.0, abs=1e-20)
