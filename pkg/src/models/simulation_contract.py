"""
Contrato de Simulação do MCTP-ANCOVA

Configurações dos estudos de erro do tipo I e de poder (cenários,
planos de execução) e os formatos dos resultados (tabela plana e
manifesto da execução).
"""

from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .analysis_contract import ContrastKind, MethodName


class SizeScheme(str, Enum):
    """Esquemas de tamanhos amostrais"""
    BALANCED = "balanced"
    NEGATIVE_PAIRING = "np"
    POSITIVE_PAIRING = "pp"
    CONSTANT_N_BALANCED = "constant-balanced"
    CONSTANT_N_NEGATIVE = "constant-np"
    CONSTANT_N_POSITIVE = "constant-pp"


class VarianceStructure(str, Enum):
    HOMOSCEDASTIC = "homoscedastic"
    GROUP_WISE = "groupwise"
    COMPLETE = "complete"


class ErrorLaw(str, Enum):
    """Distribuições dos erros (sempre padronizadas)"""
    NORMAL = "normal"
    T5 = "t5"
    CHISQ12 = "chisq12"
    EXP1 = "exp1"


class Alternative(str, Enum):
    NULL = "null"
    ALT1 = "alt1"
    ALT2 = "alt2"


class StudyKind(str, Enum):
    TYPE1 = "type1"
    POWER = "power"
    SWEEP = "sweep"


class SimSetting(BaseModel):
    """
    Cenário de simulação

    Os campos cobrem o fatorial completo de cenários (grupos, tamanhos,
    variâncias, distribuições, contrastes e alternativas) sem mudança de
    código.
    """

    model_config = ConfigDict(extra="forbid")

    a: int = Field(3, ge=3, le=5, description="Número de grupos")
    size_scheme: SizeScheme = Field(SizeScheme.BALANCED, description="Esquema de tamanhos amostrais")
    increment: int = Field(0, ge=0, description="Incremento i somado a todos os tamanhos")
    sizes: Optional[List[int]] = Field(None, description="Tamanhos explícitos (substituem o esquema)")

    variance: VarianceStructure = Field(VarianceStructure.HOMOSCEDASTIC, description="Estrutura de variância")
    sigma1: float = Field(2.0, gt=0.0, description="Desvio padrão do primeiro grupo (group-wise)")
    sigmas: Optional[List[float]] = Field(None, description="Desvios padrão explícitos por grupo")
    sigma_range: List[float] = Field([0.5, 4.0], min_length=2, max_length=2, description="Limites U(a, b) por sujeito")

    error_law: ErrorLaw = Field(ErrorLaw.NORMAL, description="Distribuição dos erros")
    contrast: ContrastKind = Field(ContrastKind.DUNNETT, description="Tipo de contraste")

    alternative: Alternative = Field(Alternative.NULL, description="Hipótese alternativa")
    delta: float = Field(0.0, ge=0.0, description="Tamanho do efeito")
    shift_pattern: Optional[List[float]] = Field(None, description="Multiplicadores de delta por grupo")

    baseline_effect: float = Field(7.0, description="Efeito de tratamento sob H0")
    covariate_effects: List[float] = Field([0.2, 1.0, 1.5, 2.0], description="Coeficientes das covariáveis")
    covariate_mean: float = Field(7.0, description="Média das covariáveis")
    covariate_sd: float = Field(1.0, gt=0.0, description="Desvio padrão das covariáveis")

    n_sim: int = Field(2000, ge=1, description="Número de réplicas")
    n_boot: int = Field(1000, ge=100, description="Réplicas bootstrap por réplica")
    alpha: float = Field(0.05, gt=0.0, lt=1.0, description="Nível de significância")
    master_seed: int = Field(1, ge=0, description="Semente mestra")

    @field_validator("contrast")
    def validate_contrast(cls, v):
        if v not in (ContrastKind.DUNNETT, ContrastKind.TUKEY, ContrastKind.GRAND_MEAN):
            raise ValueError("simulations use dunnett, tukey or grandmean contrasts")
        return v

    @field_validator("sigma_range")
    def validate_sigma_range(cls, v):
        if not 0.0 < v[0] < v[1]:
            raise ValueError("sigma_range must satisfy 0 < low < high")
        return v

    @model_validator(mode="after")
    def validate_lengths(self):
        """Vetores explícitos precisam ter um valor por grupo"""
        for name in ("sizes", "sigmas", "shift_pattern"):
            values = getattr(self, name)
            if values is not None and len(values) != self.a:
                raise ValueError(f"{name} must have {self.a} entries, got {len(values)}")
        if self.sizes is not None and min(self.sizes) < 2:
            raise ValueError("every group needs at least 2 subjects")
        if self.sigmas is not None and min(self.sigmas) <= 0:
            raise ValueError("sigmas must be positive")
        return self


# Cenários de referência (tamanhos na menor configuração, i = 0)
TABLE1_PRESETS: Dict[int, Dict[str, Any]] = {
    1: {"a": 3, "size_scheme": "np", "variance": "groupwise", "sigma1": 4.0},
    2: {"a": 5, "size_scheme": "balanced", "variance": "complete"},
    3: {"a": 3, "size_scheme": "balanced", "variance": "homoscedastic"},
    4: {"a": 4, "size_scheme": "np", "variance": "homoscedastic"},
    5: {"a": 3, "size_scheme": "np", "variance": "complete"},
}

DEFAULT_DELTAS = [round(0.2 * k, 1) for k in range(11)]
DEFAULT_INCREMENTS = list(range(0, 20, 2))


class SimulationPlan(BaseModel):
    """
    Plano de execução lido de um arquivo JSON

    `preset` seleciona um cenário de referência e `setting` sobrescreve
    campos individuais.
    """

    model_config = ConfigDict(extra="forbid")

    name: str = Field("simulation", min_length=1, description="Nome da execução")
    preset: Optional[int] = Field(None, ge=1, le=5, description="Cenário de referência (1-5)")
    setting: Dict[str, Any] = Field(default_factory=dict, description="Campos de SimSetting")
    study: StudyKind = Field(StudyKind.TYPE1, description="Tipo de estudo")
    methods: List[MethodName] = Field(
        default_factory=lambda: [MethodName.MVT_MIN, MethodName.MVT_MEAN, MethodName.MVT_MAX],
        min_length=1,
        description="Métodos comparados",
    )
    deltas: List[float] = Field(default_factory=lambda: list(DEFAULT_DELTAS), min_length=1)
    increments: List[int] = Field(default_factory=lambda: list(DEFAULT_INCREMENTS), min_length=1)
    full_procedure: bool = Field(False, description="Executa o procedimento completo em cada réplica")
    workers: int = Field(1, ge=1, description="Processos paralelos")
    output_dir: Path = Field(Path("results"), description="Diretório de saída")

    @field_validator("deltas")
    def validate_deltas(cls, v):
        if any(d < 0 for d in v):
            raise ValueError("deltas must be non-negative")
        return v

    @field_validator("increments")
    def validate_increments(cls, v):
        if any(i < 0 for i in v):
            raise ValueError("increments must be non-negative")
        return v

    @model_validator(mode="after")
    def validate_setting(self):
        """Valida o cenário resolvido já na leitura do plano"""
        setting = self.resolved_setting()
        if self.study == StudyKind.POWER and setting.alternative == Alternative.NULL:
            raise ValueError("power studies need alternative alt1 or alt2")
        if self.study != StudyKind.POWER and setting.alternative != Alternative.NULL:
            raise ValueError(f"{self.study.value} studies need the null alternative")
        return self

    def resolved_setting(self) -> SimSetting:
        base = dict(TABLE1_PRESETS[self.preset]) if self.preset is not None else {}
        base.update(self.setting)
        return SimSetting(**base)


class RateRow(BaseModel):
    """Uma linha da tabela de resultados (cenário x método x delta)"""
    study: StudyKind
    method: MethodName
    a: int
    sizes: str
    variance: VarianceStructure
    error_law: ErrorLaw
    contrast: ContrastKind
    alternative: Alternative
    delta: float
    increment: int
    n_sim: int
    n_valid: int
    rejections: int
    rate: Optional[float] = Field(None, description="null quando nenhuma réplica foi válida")
    ci_lower: Optional[float] = None
    ci_upper: Optional[float] = None
    failures: int = 0
    errors_by_type: Dict[str, int] = Field(default_factory=dict)


class StudyReport(BaseModel):
    """Relatório determinístico de um estudo (sem tempos de execução)"""
    name: str
    study: StudyKind
    master_seed: int
    seed_derivation: str
    rows: List[RateRow]

    def get_summary(self) -> str:
        failures = sum(row.failures for row in self.rows)
        return f"{self.name}: {len(self.rows)} rows, {failures} failed replicates"


class RunManifest(BaseModel):
    """Manifesto de uma execução: sementes, versões e tempos"""
    name: str
    master_seed: int
    workers: int
    versions: Dict[str, str]
    started_at: str
    elapsed_seconds: float
    files: List[str]


# Exemplo de uso
EXAMPLE_SIMULATION_PLAN = SimulationPlan(
    name="setting3-type1",
    preset=3,
    setting={"increment": 12, "n_sim": 2000},
    study=StudyKind.TYPE1,
    methods=[MethodName.MVT_MIN, MethodName.MVT_MEAN, MethodName.MVT_MAX],
)
