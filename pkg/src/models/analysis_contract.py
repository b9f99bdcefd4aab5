"""
Contrato de Análise do MCTP-ANCOVA

Este módulo define os formatos padronizados de entrada (configuração da
análise) e de saída (relatório do procedimento de contrastes múltiplos)
usados pela CLI, pela API HTTP e pelos serviços.
"""

from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class VarianceMode(str, Enum):
    """Estruturas de variância dos erros"""
    GROUP_WISE = "groupwise"
    SUBJECT_WISE = "subjectwise"
    HOMOSCEDASTIC = "homoscedastic"


class ContrastKind(str, Enum):
    """Tipos de matriz de contrastes"""
    DUNNETT = "dunnett"
    TUKEY = "tukey"
    GRAND_MEAN = "grandmean"
    USER_DEFINED = "user"
    KRONECKER_COMPOSITE = "kronecker"


class DfRule(str, Enum):
    """Regra de seleção dos graus de liberdade entre os candidatos"""
    MIN = "min"
    MEAN = "mean"
    MAX = "max"


class MethodName(str, Enum):
    """Métodos de aproximação da distribuição conjunta"""
    MVT_MIN = "mvt-min"
    MVT_MEAN = "mvt-mean"
    MVT_MAX = "mvt-max"
    NORMAL = "normal"
    BOOT = "boot"

    @property
    def df_rule(self) -> Optional[DfRule]:
        """Regra de df associada (apenas para os métodos mvt)"""
        return {
            MethodName.MVT_MIN: DfRule.MIN,
            MethodName.MVT_MEAN: DfRule.MEAN,
            MethodName.MVT_MAX: DfRule.MAX,
        }.get(self)


class OutputFormat(str, Enum):
    TEXT = "text"
    JSON = "json"


def default_method(mode: VarianceMode) -> MethodName:
    """Método padrão para cada estrutura de variância"""
    if mode == VarianceMode.SUBJECT_WISE:
        return MethodName.BOOT
    return MethodName.MVT_MIN


class AnalysisOptions(BaseModel):
    """
    Opções estatísticas de uma análise

    Compartilhadas entre a CLI (AnalysisConfig) e a API HTTP (AnalysisRequest).
    """

    model_config = ConfigDict(extra="forbid")

    response: str = Field(..., description="Coluna da variável resposta")
    factors: List[str] = Field(..., min_length=1, description="Colunas dos fatores (ao menos uma)")
    covariates: List[str] = Field(default_factory=list, description="Colunas das covariáveis")

    contrast: ContrastKind = Field(ContrastKind.DUNNETT, description="Tipo de contraste (ou base dos efeitos principais)")
    effect: Optional[List[str]] = Field(None, description="Efeito fatorial: um fator (principal) ou vários (interação)")

    variance_mode: VarianceMode = Field(VarianceMode.GROUP_WISE, description="Estrutura de variância")
    method: Optional[MethodName] = Field(None, description="Método; padrão depende da estrutura de variância")

    alpha: float = Field(0.05, gt=0.0, lt=1.0, description="Nível de significância")
    one_sided: bool = Field(False, description="Testa T_l >= c (limite superior infinito) em vez de |T_l| >= c")
    n_boot: int = Field(10000, ge=100, description="Replicações do wild bootstrap")
    seed: int = Field(1, ge=0, description="Semente do gerador aleatório")
    workers: int = Field(1, ge=1, description="Processos paralelos do bootstrap")

    @field_validator("contrast")
    def validate_contrast(cls, v):
        """KRONECKER_COMPOSITE é derivado de `effect`, não escolhido diretamente"""
        if v == ContrastKind.KRONECKER_COMPOSITE:
            raise ValueError("use 'effect' to request factorial contrasts")
        return v

    @model_validator(mode="after")
    def validate_columns(self):
        """Garante que as colunas referenciadas sejam disjuntas"""
        columns = [self.response, *self.factors, *self.covariates]
        if len(set(columns)) != len(columns):
            raise ValueError("response, factor and covariate columns must be disjoint")
        if self.effect is not None:
            unknown = [name for name in self.effect if name not in self.factors]
            if unknown:
                raise ValueError(f"effect references unknown factors: {unknown}")
            if len(set(self.effect)) != len(self.effect):
                raise ValueError("effect lists a factor twice")
        return self

    def resolved_method(self) -> MethodName:
        return self.method or default_method(self.variance_mode)


class AnalysisConfig(AnalysisOptions):
    """Configuração completa de uma análise via CLI"""

    input_path: Path = Field(..., description="Arquivo CSV (uma linha por sujeito)")
    contrast_file: Optional[Path] = Field(None, description="Matriz de contrastes explícita em CSV")
    output_format: OutputFormat = Field(OutputFormat.TEXT, description="Formato do relatório")


class AnalysisRequest(AnalysisOptions):
    """Requisição de análise pela API HTTP"""

    rows: List[Dict[str, Any]] = Field(..., min_length=2, description="Linhas do conjunto de dados")
    contrast_matrix: Optional[List[List[float]]] = Field(None, description="Matriz de contrastes explícita")
    contrast_labels: Optional[List[str]] = Field(None, description="Rótulos das linhas da matriz explícita")


class ContrastRow(BaseModel):
    """Resultado de um contraste individual"""
    label: str
    effect: float
    std_error: float
    ci_lower: Optional[float] = Field(None, description="null quando o valor crítico é infinito")
    ci_upper: Optional[float] = Field(None, description="null quando o valor crítico é infinito")
    statistic: float
    p_value: float
    reject: bool


class CovariateRow(BaseModel):
    """Estimativa de um coeficiente de covariável"""
    name: str
    estimate: float
    std_error: float


class MctpReport(BaseModel):
    """
    Relatório padronizado de um procedimento de contrastes múltiplos

    A serialização JSON é estável (mesma ordem de campos) e os números são
    emitidos com a representação mínima que reproduz o float exatamente.
    """

    method: MethodName
    variance_mode: VarianceMode
    contrast_kind: ContrastKind
    alpha: float
    seed: int

    cells: List[str]
    cell_sizes: List[int]
    contrasts: List[ContrastRow]
    covariates: List[CovariateRow] = Field(default_factory=list)

    df_candidates: Optional[List[Optional[float]]] = Field(None, description="null para candidatos infinitos")
    df_used: Optional[int] = Field(None, description="null para a distribuição normal ou o bootstrap")
    n_boot: Optional[int] = None
    critical_value: Optional[float] = Field(None, description="null quando infinito")
    correlation: Optional[List[List[float]]] = None

    global_statistic: float
    global_p_value: float
    global_reject: bool

    warnings: List[str] = Field(default_factory=list)
    diagnostics: Dict[str, int] = Field(default_factory=dict)

    def get_summary(self) -> str:
        """Retorna um resumo da decisão global"""
        decision = "rejected" if self.global_reject else "not rejected"
        return (
            f"[{self.method.value}] global H0 {decision}: "
            f"T0={self.global_statistic:.4f}, p={self.global_p_value:.4f}"
        )
