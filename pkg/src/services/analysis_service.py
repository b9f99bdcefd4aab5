"""
Serviço de Análise do MCTP-ANCOVA

Orquestra uma análise completa (dados, delineamento, ajuste, contrastes e
procedimento) para a CLI e para a API HTTP.
"""

import logging
from typing import Optional

import pandas as pd

from ..models.analysis_contract import AnalysisOptions, MctpReport, MethodName, VarianceMode
from .bootstrap_service import BootstrapSettings, mctp_boot
from .dataset_service import contrast_from_frame, dataset_from_frame
from .design_service import ContrastMatrix, EffectSpec, build_design, design_contrast
from .errors import ConfigurationError, ModeMismatch
from .estimation_service import fit
from .inference_service import QuantileSettings, mctp

logger = logging.getLogger(__name__)


def run_analysis(
    options: AnalysisOptions,
    frame: pd.DataFrame,
    contrast: Optional[ContrastMatrix] = None,
    contrast_frame: Optional[pd.DataFrame] = None,
) -> MctpReport:
    """
    Executa o procedimento de contrastes múltiplos sobre uma tabela

    Args:
        options: Opções estatísticas validadas
        frame: Tabela com uma linha por sujeito (campos como texto)
        contrast: Matriz explícita (substitui `contrast` e `effect`)
        contrast_frame: Matriz explícita lida de CSV, alinhada às caselas

    Returns:
        MctpReport

    Raises:
        MctpError: Qualquer falha de configuração, dados ou numérica
    """
    method = options.resolved_method()
    mode = options.variance_mode
    if method == MethodName.BOOT and mode != VarianceMode.SUBJECT_WISE:
        raise ModeMismatch(f"method 'boot' needs variance_mode 'subjectwise', got '{mode.value}'")
    if method == MethodName.BOOT and options.one_sided:
        raise ConfigurationError("the wild bootstrap is two-sided only; use an mvt or normal method")

    data = dataset_from_frame(frame, options)
    design = build_design(data)
    logger.info(
        f"Design built: N={design.n_obs}, {design.n_cells} cells, {design.n_covariates} covariates"
    )

    if contrast_frame is not None:
        contrast = contrast_from_frame(contrast_frame, design.cell_labels)
    if contrast is not None:
        C = contrast
        C.check_cells(design.n_cells)
    else:
        effect = EffectSpec(tuple(options.effect)) if options.effect else None
        C = design_contrast(design, effect=effect, kind=options.contrast)

    fitted = fit(design, mode)
    if method == MethodName.BOOT:
        settings = BootstrapSettings(n_boot=options.n_boot, seed=options.seed, n_jobs=options.workers)
        result = mctp_boot(fitted, design, C, options.alpha, settings)
    else:
        quantile = QuantileSettings(n_jobs=options.workers)
        result = mctp(fitted, C, design, options.alpha, method, options.seed, options.one_sided, quantile)

    report = result.to_report(design, fitted)
    logger.info(report.get_summary())
    return report
