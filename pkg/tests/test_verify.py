import pytest

from simulmma.verify import SUITES, check_alignment, check_metrics, check_monte_carlo, run_suites


class TestSuites:
    def test_alignment_suite_passes(self):
        results = check_alignment(n=30)
        assert results and all(r.passed for r in results)
        assert all(r.max_error <= r.tolerance for r in results)

    def test_monte_carlo_suite_passes(self):
        assert all(r.passed for r in check_monte_carlo())

    def test_metrics_suite_passes(self):
        results = check_metrics()
        assert {r.name for r in results} == {"wait_k_al_equals_k", "caal_zero_cost_equals_al_ms",
                                             "caal_slm_below_xlm"}
        assert all(r.passed for r in results)

    def test_records_serialise(self):
        rec = check_metrics()[0].to_dict()
        assert set(rec) >= {"suite", "name", "max_error", "tolerance", "passed", "seconds"}

    def test_named_selection(self):
        assert {r.suite for r in run_suites(["metrics"])} == {"metrics"}

    def test_unknown_suite(self):
        with pytest.raises(KeyError):
            run_suites(["bogus"])

    def test_registry(self):
        assert set(SUITES) == {"alignment", "montecarlo", "gradients", "metrics"}
