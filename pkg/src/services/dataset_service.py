"""
Serviço de Ingestão de Dados do MCTP-ANCOVA

Lê tabelas CSV (uma linha por sujeito) e linhas JSON da API, valida o
esquema e converte para AncovaDataset. Lê também matrizes de contrastes
explícitas em CSV.
"""

import io
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from ..models.analysis_contract import AnalysisOptions
from .design_service import AncovaDataset, ContrastMatrix, user_contrast
from .errors import InputFileError, NonFiniteInput, SchemaError

logger = logging.getLogger(__name__)

LABEL_COLUMN = "label"
HEADER_LINES = 1
NAN_LITERALS = ("nan", "+nan", "-nan")


def read_csv(source: Union[Path, str, bytes]) -> pd.DataFrame:
    """
    Lê um CSV UTF-8 com cabeçalho, mantendo todos os campos como texto

    Args:
        source: Caminho do arquivo ou conteúdo em bytes (upload)

    Raises:
        InputFileError: Arquivo ausente, ilegível ou sem cabeçalho
    """
    try:
        if isinstance(source, bytes):
            handle: Any = io.BytesIO(source)
            name = "<upload>"
        else:
            handle = Path(source)
            name = str(source)
        frame = pd.read_csv(handle, dtype=str, keep_default_na=False, encoding="utf-8")
    except FileNotFoundError:
        raise InputFileError(f"input file not found: {source}")
    except UnicodeDecodeError as e:
        raise InputFileError(f"input is not valid UTF-8: {e}")
    except (pd.errors.EmptyDataError, pd.errors.ParserError, OSError) as e:
        raise InputFileError(f"cannot read CSV {name}: {e}")

    frame.columns = [str(c).strip() for c in frame.columns]
    logger.debug(f"Read {len(frame)} rows and {len(frame.columns)} columns from {name}")
    return frame


def frame_from_rows(rows: List[Dict[str, Any]]) -> pd.DataFrame:
    """Converte as linhas JSON da API numa tabela de texto equivalente ao CSV"""
    frame = pd.DataFrame.from_records(rows)
    return frame.apply(lambda column: column.map(lambda v: "" if pd.isna(v) else str(v)))


def _require_columns(frame: pd.DataFrame, columns: Sequence[str]) -> None:
    for column in columns:
        if column not in frame.columns:
            raise SchemaError(f"missing column '{column}' (available: {list(frame.columns)})")


def numeric_column(frame: pd.DataFrame, column: str) -> np.ndarray:
    """
    Converte uma coluna para float com ponto decimal

    Raises:
        SchemaError: Com o número da linha do primeiro valor não numérico
        NonFiniteInput: Com o número da linha do primeiro valor nan ou inf
    """
    raw = frame[column].astype(str).str.strip()
    values = pd.to_numeric(raw, errors="coerce")
    non_numeric = (values.isna() & ~raw.str.lower().isin(NAN_LITERALS)).to_numpy()
    non_finite = ~non_numeric & ~np.isfinite(values.to_numpy(dtype=float, na_value=np.nan))
    bad = np.flatnonzero(non_numeric | non_finite)
    if bad.size:
        position = int(bad[0])
        row = position + HEADER_LINES + 1
        if non_numeric[position]:
            raise SchemaError(f"row {row}: column '{column}' has non-numeric value '{raw.iloc[position]}'")
        raise NonFiniteInput(f"row {row}: column '{column}' has non-finite value '{raw.iloc[position]}'")
    return values.to_numpy(dtype=float)


def dataset_from_frame(frame: pd.DataFrame, options: AnalysisOptions) -> AncovaDataset:
    """
    Monta o conjunto de dados a partir da tabela e das colunas configuradas

    Raises:
        SchemaError: Coluna ausente ou valor não numérico
    """
    _require_columns(frame, [options.response, *options.factors, *options.covariates])
    if len(frame) < 2:
        raise SchemaError(f"at least 2 data rows are required, got {len(frame)}")

    response = numeric_column(frame, options.response)
    if options.covariates:
        covariates = np.column_stack([numeric_column(frame, c) for c in options.covariates])
    else:
        covariates = np.zeros((len(frame), 0))

    factors = frame[options.factors].astype(str).apply(lambda column: column.str.strip())
    for column in options.factors:
        empty = np.flatnonzero((factors[column] == "").to_numpy())
        if empty.size:
            raise SchemaError(f"row {int(empty[0]) + HEADER_LINES + 1}: factor '{column}' is empty")
    groups = tuple(tuple(row) for row in factors.itertuples(index=False, name=None))

    return AncovaDataset(
        response=response,
        groups=groups,
        covariates=covariates,
        factor_names=tuple(options.factors),
        covariate_names=tuple(options.covariates),
    )


def contrast_from_frame(frame: pd.DataFrame, cell_labels: Optional[Sequence[str]] = None) -> ContrastMatrix:
    """
    Matriz de contrastes explícita: coluna `label` mais uma coluna por casela

    Se os cabeçalhos das colunas numéricas forem exatamente os rótulos das
    caselas, as colunas são reordenadas para a ordem do delineamento.

    Raises:
        SchemaError: Sem coluna `label` ou com valores não numéricos
    """
    _require_columns(frame, [LABEL_COLUMN])
    columns = [c for c in frame.columns if c != LABEL_COLUMN]
    if cell_labels is not None and set(columns) == set(cell_labels) and len(columns) == len(cell_labels):
        columns = list(cell_labels)
    C = np.column_stack([numeric_column(frame, c) for c in columns]) if columns else np.zeros((len(frame), 0))
    labels = frame[LABEL_COLUMN].astype(str).str.strip().tolist()
    return user_contrast(C, row_labels=labels)
