"""
Serviço de Métricas do MCTP-ANCOVA

Coleta contagens de rejeições e de falhas dos estudos de simulação, por
chave (método, delta, incremento), e calcula taxas com intervalos de
confiança binomiais exatos.
"""

import logging
from collections import Counter, defaultdict
from typing import Any, Dict, Hashable, List, Optional, Tuple

from scipy import stats

logger = logging.getLogger(__name__)


class RejectionMetrics:
    """
    Coletor em memória de decisões de simulação

    Réplicas que falham com erro de estimação são contadas por tipo de erro
    e excluídas do denominador da taxa, nunca descartadas em silêncio.
    """

    def __init__(self, confidence_level: float = 0.95):
        self.confidence_level = confidence_level
        self._metrics: Dict[Hashable, Dict[str, Any]] = defaultdict(lambda: {
            "total": 0,
            "rejections": 0,
            "failures": 0,
            "errors_by_type": Counter(),
        })
        logger.debug("Rejection metrics initialized")

    def record_decision(self, key: Hashable, rejected: bool) -> None:
        """
        Registra a decisão global de uma réplica

        Args:
            key: Chave do grupo de réplicas
            rejected: Se H0 global foi rejeitada
        """
        metrics = self._metrics[key]
        metrics["total"] += 1
        metrics["rejections"] += int(rejected)

    def record_failure(self, key: Hashable, error_type: str) -> None:
        """
        Registra uma réplica que falhou

        Args:
            key: Chave do grupo de réplicas
            error_type: Nome da classe do erro
        """
        metrics = self._metrics[key]
        metrics["total"] += 1
        metrics["failures"] += 1
        metrics["errors_by_type"][error_type] += 1
        logger.debug(f"Recorded replicate failure for {key}: {error_type}")

    def keys(self) -> List[Hashable]:
        return list(self._metrics.keys())

    def binomial_ci(self, rejections: int, n_valid: int) -> Tuple[Optional[float], Optional[float]]:
        """Intervalo de Clopper-Pearson para a taxa de rejeição"""
        if n_valid == 0:
            return None, None
        interval = stats.binomtest(rejections, n_valid).proportion_ci(
            confidence_level=self.confidence_level, method="exact"
        )
        return float(interval.low), float(interval.high)

    def get_stats(self, key: Hashable) -> Dict[str, Any]:
        """
        Retorna as estatísticas de uma chave

        Returns:
            Dict com total, válidas, rejeições, taxa, IC e falhas por tipo
        """
        metrics = self._metrics.get(key)
        if metrics is None:
            return {"n_sim": 0, "n_valid": 0, "rejections": 0, "rate": None,
                    "ci_lower": None, "ci_upper": None, "failures": 0, "errors_by_type": {}}

        n_valid = metrics["total"] - metrics["failures"]
        rate = metrics["rejections"] / n_valid if n_valid > 0 else None
        ci_lower, ci_upper = self.binomial_ci(metrics["rejections"], n_valid)
        return {
            "n_sim": metrics["total"],
            "n_valid": n_valid,
            "rejections": metrics["rejections"],
            "rate": rate,
            "ci_lower": ci_lower,
            "ci_upper": ci_upper,
            "failures": metrics["failures"],
            "errors_by_type": dict(sorted(metrics["errors_by_type"].items())),
        }

    def get_global_stats(self) -> Dict[str, Any]:
        """Totais de todas as chaves"""
        errors = Counter()
        for metrics in self._metrics.values():
            errors.update(metrics["errors_by_type"])
        return {
            "groups": len(self._metrics),
            "total": sum(m["total"] for m in self._metrics.values()),
            "rejections": sum(m["rejections"] for m in self._metrics.values()),
            "failures": sum(m["failures"] for m in self._metrics.values()),
            "errors_by_type": dict(sorted(errors.items())),
        }
