"""
Serviço de Simulação do MCTP-ANCOVA

Geradores de dados e o harness dos estudos de erro do tipo I e de poder.

Cada réplica r usa sementes derivadas de (master_seed, r); os dados de
uma réplica são os mesmos para todos os deltas (números aleatórios
comuns), de modo que delta = 0 reproduz o estudo sob H0.
"""

import json
import logging
import math
import platform
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import joblib
import numpy as np
import pandas as pd
import pydantic
import scipy
from joblib import Parallel, delayed

from ..models.analysis_contract import MethodName, VarianceMode
from ..models.simulation_contract import (
    TABLE1_PRESETS,
    Alternative,
    ErrorLaw,
    RateRow,
    RunManifest,
    SimSetting,
    SimulationPlan,
    SizeScheme,
    StudyKind,
    StudyReport,
    VarianceStructure,
)
from .bootstrap_service import BootstrapSettings, mctp_boot
from .design_service import AncovaDataset, build_design, design_contrast
from .errors import ConfigurationError, MctpError
from .estimation_service import fit
from .inference_service import global_test, mctp
from .metrics_service import RejectionMetrics

logger = logging.getLogger(__name__)

UNBALANCED_BASE = (8, 10, 13, 17, 20)
BALANCED_BASE = 8
CONSTANT_N_BALANCED_BASE = 10
CONSTANT_N_UNBALANCED = {3: (8, 10, 12), 4: (8, 9, 11, 12), 5: (8, 9, 10, 11, 12)}
GROUP_SIGMAS_TAIL = (1.5, 1.0, 0.5, 0.75)

# (média, variância) de cada distribuição antes da padronização
ERROR_MOMENTS = {
    ErrorLaw.NORMAL: (0.0, 1.0),
    ErrorLaw.T5: (0.0, 5.0 / 3.0),
    ErrorLaw.CHISQ12: (12.0, 24.0),
    ErrorLaw.EXP1: (1.0, 1.0),
}

SEED_DERIVATION = "SeedSequence(master_seed, spawn_key=(replicate, stream)); stream 0 = data, 1 = analysis"


def preset_setting(number: int, **overrides: Any) -> SimSetting:
    """Cenário de referência 1-5 com campos sobrescritos"""
    if number not in TABLE1_PRESETS:
        raise ConfigurationError(f"unknown preset {number}; choose one of {sorted(TABLE1_PRESETS)}")
    return SimSetting(**{**TABLE1_PRESETS[number], **overrides})


def sample_sizes(setting: SimSetting) -> Tuple[int, ...]:
    """
    Tamanhos amostrais do cenário

    NP pareia o menor n com o maior desvio padrão (o primeiro grupo); PP
    inverte a ordem.
    """
    if setting.sizes is not None:
        return tuple(setting.sizes)
    a, i = setting.a, setting.increment
    scheme = setting.size_scheme
    if scheme == SizeScheme.BALANCED:
        return tuple([BALANCED_BASE + i] * a)
    if scheme == SizeScheme.CONSTANT_N_BALANCED:
        return tuple([CONSTANT_N_BALANCED_BASE + i] * a)
    if scheme in (SizeScheme.NEGATIVE_PAIRING, SizeScheme.POSITIVE_PAIRING):
        base = UNBALANCED_BASE[:a]
    else:
        base = CONSTANT_N_UNBALANCED[a]
    if scheme in (SizeScheme.POSITIVE_PAIRING, SizeScheme.CONSTANT_N_POSITIVE):
        base = tuple(reversed(base))
    return tuple(n + i for n in base)


def group_sigmas(setting: SimSetting) -> Tuple[float, ...]:
    """Desvios padrão por grupo (homocedástico ou group-wise)"""
    if setting.sigmas is not None:
        return tuple(setting.sigmas)
    if setting.variance == VarianceStructure.GROUP_WISE:
        return ((setting.sigma1,) + GROUP_SIGMAS_TAIL)[: setting.a]
    return tuple([1.0] * setting.a)


def shift_pattern(setting: SimSetting) -> np.ndarray:
    """
    Multiplicadores de delta por grupo

    Alt1 desloca os primeiros ceil((a-1)/2) grupos em -delta; Alt2 desloca
    os primeiros ceil((a-2)/2) em -delta e os seguintes ceil((a-2)/2) em +delta.
    """
    a = setting.a
    if setting.shift_pattern is not None:
        return np.asarray(setting.shift_pattern, dtype=float)
    pattern = np.zeros(a)
    if setting.alternative == Alternative.ALT1:
        pattern[: math.ceil((a - 1) / 2)] = -1.0
    elif setting.alternative == Alternative.ALT2:
        k = math.ceil((a - 2) / 2)
        pattern[:k] = -1.0
        pattern[k: 2 * k] = 1.0
    return pattern


def standardized_errors(law: ErrorLaw, rng: np.random.Generator, size: int) -> np.ndarray:
    """Erros (Z - E Z) / sqrt(Var Z) com Z da distribuição escolhida"""
    if law == ErrorLaw.NORMAL:
        z = rng.standard_normal(size)
    elif law == ErrorLaw.T5:
        z = rng.standard_t(5, size)
    elif law == ErrorLaw.CHISQ12:
        z = rng.chisquare(12, size)
    else:
        z = rng.exponential(1.0, size)
    mean, variance = ERROR_MOMENTS[law]
    return (z - mean) / math.sqrt(variance)


def replicate_seed(master_seed: int, replicate: int, stream: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=master_seed, spawn_key=(replicate, stream))


def generate(setting: SimSetting, rep_seed: Any, delta: Optional[float] = None) -> AncovaDataset:
    """
    Gera um conjunto de dados Y = b_i + M'p + erro

    A ordem dos sorteios é fixa (covariáveis, desvios por sujeito, erros),
    então o mesmo `rep_seed` com outro delta só altera os efeitos.

    Args:
        setting: Cenário
        rep_seed: Semente (int ou SeedSequence) da réplica
        delta: Tamanho do efeito (padrão: o do cenário)
    """
    rng = np.random.default_rng(rep_seed)
    sizes = sample_sizes(setting)
    n = int(sum(sizes))
    codes = np.repeat(np.arange(setting.a), sizes)
    p = np.asarray(setting.covariate_effects, dtype=float)

    M = rng.normal(setting.covariate_mean, setting.covariate_sd, size=(n, p.shape[0]))
    if setting.variance == VarianceStructure.COMPLETE:
        low, high = setting.sigma_range
        sigma = rng.uniform(low, high, size=n)
    else:
        sigma = np.asarray(group_sigmas(setting))[codes]
    errors = sigma * standardized_errors(setting.error_law, rng, n)

    delta = setting.delta if delta is None else delta
    b = setting.baseline_effect + delta * shift_pattern(setting)
    y = b[codes] + M @ p + errors

    groups = tuple((int(c) + 1,) for c in codes)
    names = tuple(f"M{k + 1}" for k in range(p.shape[0]))
    return AncovaDataset(response=y, groups=groups, covariates=M, factor_names=("group",), covariate_names=names)


def _analysis_mode(method: MethodName) -> VarianceMode:
    return VarianceMode.SUBJECT_WISE if method == MethodName.BOOT else VarianceMode.GROUP_WISE


def decide(
    data: AncovaDataset,
    setting: SimSetting,
    method: MethodName,
    seed: int,
    full_procedure: bool = False,
) -> bool:
    """Decisão global de uma réplica"""
    design = build_design(data)
    fitted = fit(design, _analysis_mode(method))
    C = design_contrast(design, kind=setting.contrast)
    if method == MethodName.BOOT:
        settings = BootstrapSettings(n_boot=setting.n_boot, seed=seed)
        return mctp_boot(fitted, design, C, setting.alpha, settings).global_reject
    if full_procedure:
        return mctp(fitted, C, design, setting.alpha, method, seed).global_reject
    return global_test(fitted, C, design, setting.alpha, method, seed)[2]


def _replicate(
    setting: SimSetting,
    method: MethodName,
    replicate: int,
    deltas: Sequence[float],
    full_procedure: bool,
) -> List[str]:
    """Resultado por delta: 'reject', 'accept' ou o nome da classe do erro"""
    data_seed = replicate_seed(setting.master_seed, replicate, 0)
    analysis_seed = int(replicate_seed(setting.master_seed, replicate, 1).generate_state(1)[0])
    outcomes = []
    for delta in deltas:
        try:
            data = generate(setting, data_seed, delta)
            rejected = decide(data, setting, method, analysis_seed, full_procedure)
            outcomes.append("reject" if rejected else "accept")
        except MctpError as e:
            outcomes.append(type(e).__name__)
    return outcomes


def _run(
    setting: SimSetting,
    method: MethodName,
    deltas: Sequence[float],
    study: StudyKind,
    workers: int = 1,
    full_procedure: bool = False,
) -> List[RateRow]:
    """Executa n_sim réplicas e agrega por delta (ordem das réplicas preservada)"""
    if workers == 1:
        results = [_replicate(setting, method, r, deltas, full_procedure) for r in range(setting.n_sim)]
    else:
        results = Parallel(n_jobs=workers)(
            delayed(_replicate)(setting, method, r, deltas, full_procedure) for r in range(setting.n_sim)
        )

    metrics = RejectionMetrics()
    for outcomes in results:
        for k, outcome in enumerate(outcomes):
            if outcome in ("reject", "accept"):
                metrics.record_decision(k, outcome == "reject")
            else:
                metrics.record_failure(k, outcome)

    sizes = "-".join(str(n) for n in sample_sizes(setting))
    rows = []
    for k, delta in enumerate(deltas):
        stats = metrics.get_stats(k)
        if stats["failures"]:
            logger.warning(f"{method.value} delta={delta}: {stats['failures']} failed replicates {stats['errors_by_type']}")
        rows.append(
            RateRow(
                study=study,
                method=method,
                a=setting.a,
                sizes=sizes,
                variance=setting.variance,
                error_law=setting.error_law,
                contrast=setting.contrast,
                alternative=setting.alternative,
                delta=float(delta),
                increment=setting.increment,
                **stats,
            )
        )
    return rows


def type1_study(
    setting: SimSetting, method: MethodName, workers: int = 1, full_procedure: bool = False
) -> RateRow:
    """
    Taxa empírica de rejeição da H0 global

    Raises:
        ConfigurationError: Se o cenário não estiver sob H0
    """
    if setting.alternative != Alternative.NULL:
        raise ConfigurationError("type-I error studies need the null alternative")
    row = _run(setting, method, [0.0], StudyKind.TYPE1, workers, full_procedure)[0]
    logger.info(f"Type-I study {method.value} n={row.sizes}: rate={row.rate} ({row.n_valid} valid replicates)")
    return row


def power_study(
    setting: SimSetting,
    method: MethodName,
    deltas: Sequence[float],
    workers: int = 1,
    full_procedure: bool = False,
) -> List[RateRow]:
    """
    Curva de poder sobre a grade de deltas (mesmas réplicas para todos)

    Raises:
        ConfigurationError: Se a alternativa for a nula
    """
    if setting.alternative == Alternative.NULL:
        raise ConfigurationError("power studies need alternative alt1 or alt2")
    rows = _run(setting, method, list(deltas), StudyKind.POWER, workers, full_procedure)
    logger.info(f"Power study {method.value}: {[row.rate for row in rows]}")
    return rows


def sample_size_sweep(
    setting: SimSetting,
    method: MethodName,
    increments: Sequence[int],
    workers: int = 1,
    full_procedure: bool = False,
) -> List[RateRow]:
    """Erro do tipo I ao longo dos incrementos de tamanho amostral"""
    rows = []
    for increment in increments:
        current = setting.model_copy(update={"increment": int(increment)})
        row = type1_study(current, method, workers, full_procedure)
        rows.append(row.model_copy(update={"study": StudyKind.SWEEP}))
    return rows


def expand_plan(plan: SimulationPlan) -> List[Dict[str, Any]]:
    """Grade expandida do plano (uma entrada por cenário x método x delta)"""
    setting = plan.resolved_setting()
    grid = []
    increments = plan.increments if plan.study == StudyKind.SWEEP else [setting.increment]
    deltas = plan.deltas if plan.study == StudyKind.POWER else [setting.delta]
    for method in plan.methods:
        for increment in increments:
            current = setting.model_copy(update={"increment": int(increment)})
            sizes = "-".join(str(n) for n in sample_sizes(current))
            for delta in deltas:
                grid.append({
                    "study": plan.study.value,
                    "method": method.value,
                    "a": current.a,
                    "sizes": sizes,
                    "variance": current.variance.value,
                    "error_law": current.error_law.value,
                    "contrast": current.contrast.value,
                    "alternative": current.alternative.value,
                    "delta": float(delta),
                    "increment": int(increment),
                    "n_sim": current.n_sim,
                })
    return grid


def run_study(plan: SimulationPlan, workers: Optional[int] = None) -> StudyReport:
    """Executa o plano e devolve o relatório determinístico"""
    setting = plan.resolved_setting()
    workers = workers or plan.workers
    rows: List[RateRow] = []
    for method in plan.methods:
        if plan.study == StudyKind.TYPE1:
            rows.append(type1_study(setting, method, workers, plan.full_procedure))
        elif plan.study == StudyKind.POWER:
            rows.extend(power_study(setting, method, plan.deltas, workers, plan.full_procedure))
        else:
            rows.extend(sample_size_sweep(setting, method, plan.increments, workers, plan.full_procedure))
    return StudyReport(
        name=plan.name,
        study=plan.study,
        master_seed=setting.master_seed,
        seed_derivation=SEED_DERIVATION,
        rows=rows,
    )


def library_versions() -> Dict[str, str]:
    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pd.__version__,
        "joblib": joblib.__version__,
        "pydantic": pydantic.VERSION,
    }


def run_plan(plan: SimulationPlan, output_dir: Optional[Path] = None, workers: Optional[int] = None) -> StudyReport:
    """
    Executa o plano e grava results.csv, results.json e manifest.json

    Os tempos de execução vão apenas para o manifesto; results.json é
    idêntico byte a byte para a mesma semente e qualquer número de processos.
    """
    output_dir = Path(output_dir or plan.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    workers = workers or plan.workers

    started_at = datetime.now(timezone.utc).isoformat()
    start = time.perf_counter()
    logger.info(f"Running simulation plan '{plan.name}' ({plan.study.value}) with {workers} worker(s)")

    report = run_study(plan, workers)
    elapsed = time.perf_counter() - start

    rows = [row.model_dump(mode="json") for row in report.rows]
    table = pd.DataFrame(rows)
    table["errors_by_type"] = [json.dumps(row["errors_by_type"], sort_keys=True) for row in rows]
    table.to_csv(output_dir / "results.csv", index=False)

    (output_dir / "results.json").write_text(
        json.dumps(report.model_dump(mode="json"), indent=2) + "\n", encoding="utf-8"
    )

    manifest = RunManifest(
        name=plan.name,
        master_seed=report.master_seed,
        workers=workers,
        versions=library_versions(),
        started_at=started_at,
        elapsed_seconds=round(elapsed, 3),
        files=["results.csv", "results.json", "manifest.json"],
    )
    (output_dir / "manifest.json").write_text(
        json.dumps(manifest.model_dump(mode="json"), indent=2) + "\n", encoding="utf-8"
    )

    logger.info(f"{report.get_summary()} in {elapsed:.1f}s, written to {output_dir}")
    return report


DOSE_LEVELS = (0, 50, 100, 250, 500, 1000)
SEX_LEVELS = ("F", "M")


def synthetic_two_factor_example(seed: int = 1, n_per_cell: int = 10) -> pd.DataFrame:
    """
    Conjunto sintético 6 doses x 2 sexos com duas covariáveis

    Resposta no dia 90, valor basal e variação de peso; variâncias
    diferentes entre as caselas.
    """
    rng = np.random.default_rng(seed)
    dose_effects = dict(zip(DOSE_LEVELS, (0.3, -1.0, 0.0, -1.7, 0.2, 2.8)))
    sex_effects = {"F": 0.0, "M": 2.5}
    sex_weight = {"F": 60.0, "M": 120.0}

    records = []
    for dose in DOSE_LEVELS:
        for k, sex in enumerate(SEX_LEVELS):
            sigma = 0.8 + 0.35 * DOSE_LEVELS.index(dose) + 0.5 * k
            baseline = rng.normal(15.0, 2.0, size=n_per_cell)
            weight_change = rng.normal(sex_weight[sex], 20.0, size=n_per_cell)
            mean = 15.0 + dose_effects[dose] + sex_effects[sex]
            response = (
                mean
                - 0.036 * (baseline - 15.0)
                - 0.009 * (weight_change - sex_weight[sex])
                + sigma * rng.standard_normal(n_per_cell)
            )
            for j in range(n_per_cell):
                records.append({
                    "dose": str(dose),
                    "sex": sex,
                    "bun_baseline": round(float(baseline[j]), 3),
                    "weight_change": round(float(weight_change[j]), 3),
                    "bun_day90": round(float(response[j]), 3),
                })
    return pd.DataFrame.from_records(records, columns=["dose", "sex", "bun_baseline", "weight_change", "bun_day90"])
