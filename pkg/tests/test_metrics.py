"""
Testes do coletor de métricas de simulação
"""

import pytest

from src.services.metrics_service import RejectionMetrics


class TestRejectionMetrics:
    """Contagens, taxas e intervalos"""

    def test_failures_leave_denominator(self):
        metrics = RejectionMetrics()
        for rejected in (True, False, False, True):
            metrics.record_decision("a", rejected)
        metrics.record_failure("a", "RankDeficient")

        stats = metrics.get_stats("a")
        assert stats["n_sim"] == 5
        assert stats["n_valid"] == 4
        assert stats["rate"] == pytest.approx(0.5)
        assert stats["errors_by_type"] == {"RankDeficient": 1}
        assert stats["ci_lower"] < 0.5 < stats["ci_upper"]

    def test_only_failures(self):
        metrics = RejectionMetrics()
        metrics.record_failure(0, "LeverageOne")
        stats = metrics.get_stats(0)
        assert stats["rate"] is None
        assert stats["ci_lower"] is None and stats["ci_upper"] is None

    def test_unknown_key(self):
        assert RejectionMetrics().get_stats("missing")["n_sim"] == 0

    def test_clopper_pearson_bounds(self):
        low, high = RejectionMetrics().binomial_ci(0, 20)
        assert low == 0.0
        assert high == pytest.approx(1.0 - 0.025 ** (1.0 / 20.0), rel=1e-6)

    def test_global_stats(self):
        metrics = RejectionMetrics()
        metrics.record_decision(0, True)
        metrics.record_decision(1, False)
        metrics.record_failure(1, "DegenerateBootstrap")
        totals = metrics.get_global_stats()
        assert totals["groups"] == 2
        assert totals["total"] == 3
        assert totals["rejections"] == 1
        assert totals["errors_by_type"] == {"DegenerateBootstrap": 1}
