"""
Serviço de Inferência do MCTP-ANCOVA

Monta o procedimento de contrastes múltiplos: estatísticas de teste,
matriz de correlação estimada, graus de liberdade de Satterthwaite-Box,
valor crítico, p-valores ajustados, intervalos simultâneos compatíveis e
as decisões global e individuais.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from ..models.analysis_contract import (
    ContrastRow,
    CovariateRow,
    DfRule,
    MctpReport,
    MethodName,
    VarianceMode,
)
from .design_service import ContrastMatrix, DesignBundle
from .errors import DegenerateVariance, ModeMismatch
from .estimation_service import FittedAncova
from .mvt_service import (
    DEFAULT_MAX_SAMPLES,
    DEFAULT_SAMPLES,
    DEFAULT_SHIFTS,
    DEFAULT_TOL,
    INFINITE_DF,
    CorrelationMatrix,
    QuantileRequest,
    adj_pvalues,
    equi_quantile,
    rect_prob,
)

logger = logging.getLogger(__name__)

VARIANCE_REL_TOL = 1e-13


@dataclass(frozen=True)
class QuantileSettings:
    """Parâmetros de precisão do motor de quantis"""
    tol: float = DEFAULT_TOL
    n_samples: int = DEFAULT_SAMPLES
    max_samples: int = DEFAULT_MAX_SAMPLES
    n_shifts: int = DEFAULT_SHIFTS
    n_jobs: int = 1


@dataclass(frozen=True, eq=False)
class MctpResult:
    """
    Resultado do procedimento de contrastes múltiplos

    Invariantes: global_stat = max|T|, global_p = min(p_adj) e
    reject = (|T| >= crit) = (0 fora do IC) = (p_adj <= alpha).
    """
    contrast: ContrastMatrix
    effects: np.ndarray
    std_errors: np.ndarray
    statistics: np.ndarray
    R_hat: CorrelationMatrix
    df_candidates: Optional[np.ndarray]
    df_used: float
    crit: float
    p_adj: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    reject: np.ndarray
    global_stat: float
    global_p: float
    global_reject: bool
    alpha: float
    method: MethodName
    seed: int
    n_boot: Optional[int] = None
    crit_std_error: Optional[float] = None
    warnings: Tuple[str, ...] = ()
    diagnostics: Dict[str, int] = field(default_factory=dict)

    def to_report(self, design: DesignBundle, fit: FittedAncova) -> MctpReport:
        """Converte o resultado no relatório padronizado"""
        rows = [
            ContrastRow(
                label=label,
                effect=float(self.effects[k]),
                std_error=float(self.std_errors[k]),
                ci_lower=_finite_or_none(self.ci_lower[k]),
                ci_upper=_finite_or_none(self.ci_upper[k]),
                statistic=float(self.statistics[k]),
                p_value=float(self.p_adj[k]),
                reject=bool(self.reject[k]),
            )
            for k, label in enumerate(self.contrast.row_labels)
        ]
        covariate_se = np.sqrt(np.clip(np.diag(fit.Xi_hat), 0.0, None))
        covariates = [
            CovariateRow(name=name, estimate=float(fit.p_hat[j]), std_error=float(covariate_se[j]))
            for j, name in enumerate(design.covariate_names)
        ]
        return MctpReport(
            method=self.method,
            variance_mode=fit.mode,
            contrast_kind=self.contrast.kind,
            alpha=self.alpha,
            seed=self.seed,
            cells=design.cell_labels,
            cell_sizes=[int(n) for n in design.cell_sizes],
            contrasts=rows,
            covariates=covariates,
            df_candidates=None if self.df_candidates is None else [_finite_or_none(v) for v in self.df_candidates],
            df_used=None if self.df_used == INFINITE_DF else int(self.df_used),
            n_boot=self.n_boot,
            critical_value=_finite_or_none(self.crit),
            correlation=self.R_hat.R.tolist(),
            global_statistic=self.global_stat,
            global_p_value=self.global_p,
            global_reject=self.global_reject,
            warnings=list(self.warnings) + list(fit.warnings),
            diagnostics=dict(self.diagnostics),
        )


def _finite_or_none(value: float) -> Optional[float]:
    value = float(value)
    return value if math.isfinite(value) else None


def _contrast_variances(Psi: np.ndarray, C: ContrastMatrix) -> np.ndarray:
    variances = np.einsum("ij,jk,ik->i", C.C, Psi, C.C)
    scale = (C.C ** 2) @ np.abs(np.diag(Psi))
    bad = np.flatnonzero(variances <= VARIANCE_REL_TOL * scale)
    if bad.size:
        raise DegenerateVariance(
            f"contrast '{C.row_labels[bad[0]]}' has estimated variance {variances[bad[0]]:.3g}"
        )
    return variances


def test_statistics(fit: FittedAncova, C: ContrastMatrix) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Estatísticas T_l = c_l'b / sqrt(c_l' Psi c_l)

    Returns:
        (effects, se, statistics)

    Raises:
        DegenerateVariance: Se alguma variância de contraste for (quase) nula
    """
    C.check_cells(fit.b_hat.shape[0])
    effects = C.C @ fit.b_hat
    se = np.sqrt(_contrast_variances(fit.Psi_hat, C))
    return effects, se, effects / se


# impede que pytest trate a função como teste
test_statistics.__test__ = False


def correlation(fit: FittedAncova, C: ContrastMatrix) -> CorrelationMatrix:
    """Matriz de correlação estimada das estatísticas de teste"""
    C.check_cells(fit.b_hat.shape[0])
    _contrast_variances(fit.Psi_hat, C)
    V = C.C @ fit.Psi_hat @ C.C.T
    scale = 1.0 / np.sqrt(np.diag(V))
    R = V * np.outer(scale, scale)
    R = (R + R.T) / 2.0
    np.fill_diagonal(R, 1.0)
    return CorrelationMatrix.from_matrix(R)


def box_dfs(fit: FittedAncova, C: ContrastMatrix, design: DesignBundle) -> Tuple[np.ndarray, Tuple[str, ...]]:
    """
    Graus de liberdade de Satterthwaite-Box por contraste

    Com w = c_l'D e s_i = soma de w_j^2 na casela i:
    nu_l = (c_l' Psi c_l)^2 / sum_i s_i^2 sigma2_i^2 / df_i.
    Valores abaixo de 1 são truncados em 1 (com aviso).

    Returns:
        (nu, avisos)

    Raises:
        ModeMismatch: Se o ajuste não for por grupo
        DegenerateVariance: Se alguma variância de contraste for nula
    """
    if fit.mode != VarianceMode.GROUP_WISE or fit.sigma2_group is None:
        raise ModeMismatch(f"Satterthwaite degrees of freedom need the groupwise fit, got {fit.mode.value}")
    C.check_cells(design.n_cells)
    variances = _contrast_variances(fit.Psi_hat, C)

    W2 = (C.C @ fit.D) ** 2
    S = np.stack([W2[:, design.cell_slice(i)].sum(axis=1) for i in range(design.n_cells)], axis=1)
    denominator = (S ** 2) @ (fit.sigma2_group ** 2 / fit.dfs_group)

    with np.errstate(divide="ignore"):
        nu = np.where(denominator > 0.0, variances ** 2 / denominator, np.inf)

    notes = []
    low = nu < 1.0
    if np.any(low):
        labels = [C.row_labels[k] for k in np.flatnonzero(low)]
        notes.append(f"Satterthwaite df below 1 clamped to 1 for {labels}")
        logger.warning(f"Clamping df to 1 for contrasts {labels} (values {nu[low].round(3).tolist()})")
        nu = np.maximum(nu, 1.0)
    return nu, tuple(notes)


def select_df(nu: np.ndarray, rule: DfRule) -> float:
    """
    Seleciona os df entre os candidatos

    Min arredonda para baixo, Mean arredonda a média para o inteiro mais
    próximo (meio para cima) e Max arredonda para cima. Candidatos
    infinitos produzem df infinito.
    """
    nu = np.asarray(nu, dtype=float)
    if rule == DfRule.MIN:
        value = float(nu.min())
        return INFINITE_DF if math.isinf(value) else float(max(math.floor(value), 1))
    if rule == DfRule.MAX:
        value = float(nu.max())
        return INFINITE_DF if math.isinf(value) else float(max(math.ceil(value), 1))
    value = float(nu.mean())
    return INFINITE_DF if math.isinf(value) else float(max(math.floor(value + 0.5), 1))


def reconcile(
    statistics: np.ndarray, crit: float, p_adj: np.ndarray, alpha: float, one_sided: bool = False
) -> Tuple[np.ndarray, np.ndarray, int]:
    """
    Alinha os p-valores à decisão pelo valor crítico

    A decisão é |T| >= crit; um p-valor do lado errado de alpha (ruído de
    Monte Carlo ou regra de quantil) é levado à fronteira.

    Returns:
        (p ajustados, rejeições, número de p-valores movidos)
    """
    observed = statistics if one_sided else np.abs(statistics)
    reject = observed >= crit
    p = np.array(p_adj, dtype=float)
    above = np.nextafter(alpha, 1.0)
    moved = 0
    for k in range(p.shape[0]):
        if reject[k] and p[k] > alpha:
            p[k] = alpha
            moved += 1
        elif not reject[k] and p[k] <= alpha:
            p[k] = above
            moved += 1
    if moved:
        logger.warning(f"Moved {moved} adjusted p-value(s) to the alpha boundary to match the critical value")
    return p, reject, moved


def resolve_df(
    fit: FittedAncova, C: ContrastMatrix, design: DesignBundle, method: MethodName
) -> Tuple[Optional[np.ndarray], float, Tuple[str, ...]]:
    """df candidatos e df usados para o método e a estrutura de variância"""
    if method == MethodName.BOOT:
        raise ModeMismatch("the bootstrap method is run by the bootstrap service")
    if method == MethodName.NORMAL:
        if fit.mode == VarianceMode.GROUP_WISE:
            nu, notes = box_dfs(fit, C, design)
            return nu, INFINITE_DF, notes
        return None, INFINITE_DF, ()
    if fit.mode == VarianceMode.SUBJECT_WISE:
        raise ModeMismatch("multivariate-t methods need groupwise or homoscedastic variances; use the bootstrap")
    if fit.mode == VarianceMode.HOMOSCEDASTIC:
        nu = np.full(C.n_rows, float(fit.residual_df))
        return nu, float(fit.residual_df), ()
    nu, notes = box_dfs(fit, C, design)
    return nu, select_df(nu, method.df_rule), notes


def mctp(
    fit: FittedAncova,
    C: ContrastMatrix,
    design: DesignBundle,
    alpha: float = 0.05,
    method: MethodName = MethodName.MVT_MIN,
    seed: int = 1,
    one_sided: bool = False,
    quantile: Optional[QuantileSettings] = None,
) -> MctpResult:
    """
    Procedimento de contrastes múltiplos com aproximação paramétrica

    Args:
        fit: Modelo ajustado (GroupWise ou Homoscedastic para mvt)
        C: Matriz de contrastes
        design: Delineamento do ajuste
        alpha: Nível de significância
        method: mvt-min, mvt-mean, mvt-max ou normal
        seed: Semente do motor de quantis
        one_sided: Testa T_l >= crit em vez de |T_l| >= crit
        quantile: Precisão do motor de quantis

    Returns:
        MctpResult com decisões compatíveis
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    quantile = quantile or QuantileSettings()

    effects, se, statistics = test_statistics(fit, C)
    R_hat = correlation(fit, C)
    nu, df_used, notes = resolve_df(fit, C, design, method)

    request = QuantileRequest(
        level=1.0 - alpha,
        R=R_hat,
        df=df_used,
        seed=seed,
        tol=quantile.tol,
        n_samples=quantile.n_samples,
        max_samples=quantile.max_samples,
        n_shifts=quantile.n_shifts,
        one_sided=one_sided,
        n_jobs=quantile.n_jobs,
    )
    crit_result = equi_quantile(request)
    crit = crit_result.value

    p_raw = adj_pvalues(
        statistics, df_used, R_hat, seed, quantile.n_samples, quantile.n_shifts, one_sided, quantile.n_jobs
    )
    p_adj, reject, moved = reconcile(statistics, crit, p_raw, alpha, one_sided)

    ci_lower = effects - crit * se
    ci_upper = np.full_like(effects, np.inf) if one_sided else effects + crit * se

    global_stat = float(np.max(statistics if one_sided else np.abs(statistics)))
    logger.info(
        f"MCTP {method.value}: q={C.n_rows}, df={df_used}, crit={crit:.4f}, "
        f"T0={global_stat:.4f}, rejected {int(reject.sum())}/{C.n_rows}"
    )

    return MctpResult(
        contrast=C,
        effects=effects,
        std_errors=se,
        statistics=statistics,
        R_hat=R_hat,
        df_candidates=nu,
        df_used=df_used,
        crit=crit,
        p_adj=p_adj,
        ci_lower=ci_lower,
        ci_upper=ci_upper,
        reject=reject,
        global_stat=global_stat,
        global_p=float(p_adj.min()),
        global_reject=bool(reject.any()),
        alpha=alpha,
        method=method,
        seed=seed,
        crit_std_error=crit_result.std_error,
        warnings=notes,
        diagnostics={"reconciled_p_values": moved},
    )


def global_test(
    fit: FittedAncova,
    C: ContrastMatrix,
    design: DesignBundle,
    alpha: float = 0.05,
    method: MethodName = MethodName.MVT_MIN,
    seed: int = 1,
    quantile: Optional[QuantileSettings] = None,
) -> Tuple[float, float, bool]:
    """
    Apenas a decisão global: T0 e uma avaliação de probabilidade

    Returns:
        (T0, p global, rejeição)
    """
    quantile = quantile or QuantileSettings()
    _, _, statistics = test_statistics(fit, C)
    R_hat = correlation(fit, C)
    _, df_used, _ = resolve_df(fit, C, design, method)
    t0 = float(np.max(np.abs(statistics)))
    prob = rect_prob(t0, df_used, R_hat, seed, quantile.n_samples, quantile.n_shifts, n_jobs=quantile.n_jobs)
    p_global = float(np.clip(1.0 - prob.value, 0.0, 1.0))
    return t0, p_global, p_global <= alpha
