"""Tests for the identity check registry and the checks it loads."""

import pytest

from loctime import registry
from loctime.checks.base import IdentityCheck
from loctime.checks.g_kernel import GKernelCheck
from loctime.checks.mass import MassCheck
from loctime.checks.occupation import OccupationCheck
from loctime.checks.tail_integral import TailIntegralCheck
from loctime.models import CheckResult


@pytest.fixture(scope="module")
def identities_config():
    return registry._load_identities_config()


@pytest.fixture(scope="module")
def groups():
    return registry.run_identities()


class TestGetCheckClass:
    def test_finds_subclass(self):
        assert registry._get_check_class("loctime.checks.mass") is MassCheck

    def test_module_without_check(self):
        with pytest.raises(ValueError):
            registry._get_check_class("loctime.numerics")

    def test_missing_module(self):
        with pytest.raises(ImportError):
            registry._get_check_class("loctime.checks.nonexistent")


class TestGetEnabledChecks:
    def test_all_enabled_by_default(self, identities_config):
        checks = registry.get_enabled_checks()
        assert [c[0] for c in checks] == list(identities_config["checks"])
        assert all(isinstance(c[1], IdentityCheck) for c in checks)

    def test_disabled_checks_skipped(self, identities_config):
        config = {"checks": {k: dict(v) for k, v in identities_config["checks"].items()}}
        config["checks"]["g_kernel"]["enabled"] = False
        ids = [c[0] for c in registry.get_enabled_checks(config)]
        assert "g_kernel" not in ids
        assert "mass" in ids


class TestRunIdentities:
    def test_every_identity_passes(self, groups):
        failed = [(name, r.name) for name, results in groups for r in results if not r.passed]
        assert failed == []

    def test_group_names(self, groups):
        assert [name for name, _ in groups] == [
            "Tail integral K(a)", "g_h kernel", "Heat kernel", "Occupation-time formula", "Mass conservation",
        ]

    def test_tail_points_each_get_a_line(self, groups, identities_config):
        tail = dict(groups)["Tail integral K(a)"]
        assert len(tail) == 1 + len(identities_config["checks"]["tail_integral"]["points"])


class TestRenderTable:
    def test_all_passed_footer(self, groups):
        table = registry.render_table(groups)
        assert table.rstrip().endswith("All identity checks passed")
        assert "-- Mass conservation" in table
        assert "FAIL" not in table

    def test_failure_footer(self):
        bad = CheckResult(name="broken", value=1.0, target=0.0, deviation=1.0, tolerance=0.1, passed=False)
        table = registry.render_table([("demo", [bad])])
        assert "FAIL" in table
        assert "1 identity check(s) FAILED" in table


class TestCheckResults:
    def test_relative_tolerance(self):
        result = GKernelCheck()._result("ratio", 1.05, 1.0, 0.1, relative=True)
        assert result.passed
        assert result.deviation == pytest.approx(0.05)

    def test_nan_fails(self):
        assert not MassCheck()._result("nan", float("nan"), 1.0, 1.0).passed

    def test_tight_tolerance_fails(self, identities_config):
        settings = dict(identities_config["checks"]["tail_integral"], quad_tol=0.0, zero_tol=0.0)
        results = TailIntegralCheck().run(settings)
        assert not all(r.passed for r in results)

    def test_occupation_lines(self, identities_config):
        results = OccupationCheck().run(identities_config["checks"]["occupation"])
        assert len(results) == 3
        assert all(r.passed for r in results)

    def test_repr(self):
        assert "mass" in repr(MassCheck())
