"""
API de Análise do MCTP-ANCOVA

Endpoints para executar o procedimento de contrastes múltiplos sobre
linhas JSON ou sobre um CSV enviado por upload.
"""

import logging
from typing import Any, Dict

from fastapi import APIRouter, File, Form, HTTPException, UploadFile
from pydantic import ValidationError
from starlette.concurrency import run_in_threadpool

from ..models.analysis_contract import AnalysisOptions, AnalysisRequest, MctpReport
from ..services.analysis_service import run_analysis
from ..services.dataset_service import frame_from_rows, read_csv
from ..services.design_service import user_contrast
from ..services.errors import ConfigurationError, MctpError
from ..services.metrics_service import RejectionMetrics

# Configuração de logging
logger = logging.getLogger(__name__)

# Router para endpoints de análise
router = APIRouter(prefix="/api/v1/analysis", tags=["analysis"])

# Contagem de decisões globais por método
metrics_service = RejectionMetrics()


def status_code_for(error: MctpError) -> int:
    """400 para erros de configuração, 422 para dados e falhas numéricas"""
    return 400 if isinstance(error, ConfigurationError) else 422


def _record(options: AnalysisOptions, report: MctpReport) -> None:
    metrics_service.record_decision(options.resolved_method().value, report.global_reject)


@router.post("", response_model=MctpReport)
async def analyze_rows(request: AnalysisRequest):
    """
    Executa a análise sobre as linhas enviadas em JSON

    Uma matriz de contrastes explícita (`contrast_matrix`) substitui o tipo de
    contraste e o efeito fatorial.
    """
    try:
        frame = frame_from_rows(request.rows)
        contrast = None
        if request.contrast_matrix is not None:
            contrast = user_contrast(request.contrast_matrix, request.contrast_labels)
        options = AnalysisOptions(**request.model_dump(exclude={"rows", "contrast_matrix", "contrast_labels"}))

        report = await run_in_threadpool(run_analysis, options, frame, contrast)
        _record(options, report)
        logger.info(f"Analysis finished: {report.get_summary()}")
        return report

    except MctpError as e:
        metrics_service.record_failure(request.resolved_method().value, type(e).__name__)
        logger.error(f"Analysis failed: {e.one_line()}")
        raise HTTPException(status_code=status_code_for(e), detail=e.one_line())


@router.post("/csv", response_model=MctpReport)
async def analyze_csv(
    file: UploadFile = File(..., description="CSV com uma linha por sujeito"),
    config: str = Form(..., description="AnalysisOptions em JSON"),
):
    """
    Executa a análise sobre um CSV enviado por upload
    """
    try:
        options = AnalysisOptions.model_validate_json(config)
    except ValidationError as e:
        logger.error(f"Invalid analysis options: {e}")
        raise HTTPException(status_code=400, detail=f"Invalid analysis options: {e.errors()[0]['msg']}")

    try:
        frame = read_csv(await file.read())
        report = await run_in_threadpool(run_analysis, options, frame)
        _record(options, report)
        logger.info(f"CSV analysis finished ({file.filename}): {report.get_summary()}")
        return report

    except MctpError as e:
        metrics_service.record_failure(options.resolved_method().value, type(e).__name__)
        logger.error(f"CSV analysis failed: {e.one_line()}")
        raise HTTPException(status_code=status_code_for(e), detail=e.one_line())


@router.get("/stats", response_model=Dict[str, Any])
async def get_stats():
    """
    Endpoint para obter as contagens de análises por método
    """
    return {
        "global": metrics_service.get_global_stats(),
        "methods": {str(key): metrics_service.get_stats(key) for key in metrics_service.keys()},
    }
