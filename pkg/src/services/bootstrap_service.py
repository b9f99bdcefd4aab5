"""
Serviço de Wild Bootstrap do MCTP-ANCOVA

Aproxima a distribuição condicional de T0 = max|T_l| sob
heterocedasticidade completa, multiplicando os resíduos escalonados por
sinais aleatórios (pesos de Rademacher).

A réplica r usa um fluxo aleatório derivado de (seed, r); os blocos só
agrupam réplicas para vetorizar, e a amostra não depende do tamanho do
bloco nem do número de processos.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from joblib import Parallel, delayed

from ..models.analysis_contract import MethodName, VarianceMode
from .design_service import ContrastMatrix, DesignBundle
from .errors import AllResidualsZero, DegenerateBootstrap, LeverageOne, ModeMismatch
from .estimation_service import FittedAncova
from .inference_service import VARIANCE_REL_TOL, MctpResult, correlation, reconcile, test_statistics
from .mvt_service import INFINITE_DF

logger = logging.getLogger(__name__)

BLOCK_SIZE = 1000
MAX_ENUMERATION_N = 20
LEVERAGE_LIMIT = 1.0 - 1e-8
ZERO_RESIDUAL_TOL = 1e-12


@dataclass(frozen=True)
class BootstrapSettings:
    """Configuração do wild bootstrap (pesos de Rademacher)"""
    n_boot: int = 10000
    seed: int = 1
    n_jobs: int = 1
    block_size: int = BLOCK_SIZE
    max_degenerate_fraction: float = 0.01

    def __post_init__(self):
        if self.n_boot < 100:
            raise ValueError(f"n_boot must be at least 100, got {self.n_boot}")
        if self.block_size < 1:
            raise ValueError(f"block_size must be positive, got {self.block_size}")
        if not 0.0 <= self.max_degenerate_fraction < 1.0:
            raise ValueError("max_degenerate_fraction must be in [0, 1)")


@dataclass(frozen=True, eq=False)
class BootstrapDistribution:
    """Amostra de T0* (ordem das réplicas) e número de réplicas degeneradas"""
    sample: np.ndarray
    n_degenerate: int

    @property
    def size(self) -> int:
        return self.sample.shape[0]


def scaled_residuals(fit: FittedAncova, design: DesignBundle) -> np.ndarray:
    """
    Resíduos OLS escalonados eps_ij / sqrt(1 - p_ij), na ordem interna

    Raises:
        ModeMismatch: Se o ajuste não for por sujeito
        LeverageOne: Se alguma alavanca for (quase) 1
    """
    if fit.mode != VarianceMode.SUBJECT_WISE:
        raise ModeMismatch(f"the wild bootstrap needs the subjectwise (OLS) fit, got {fit.mode.value}")
    if np.any(design.leverages >= LEVERAGE_LIMIT):
        raise LeverageOne("an observation has leverage 1; its residual cannot be rescaled")
    return fit.residuals / np.sqrt(1.0 - design.leverages)


def sign_vectors(n: int) -> np.ndarray:
    """Todos os 2^n vetores de sinais, um por linha"""
    codes = np.arange(2 ** n)[:, None]
    bits = (codes >> np.arange(n)) & 1
    return 1.0 - 2.0 * bits


def _max_statistics(weights: np.ndarray, scaled: np.ndarray, G: np.ndarray, design: DesignBundle) -> np.ndarray:
    """T0* para um lote de vetores de pesos (linhas)"""
    y_star = weights * scaled
    effects = y_star @ G.T
    residual = y_star - (y_star @ design.P_B.T) @ design.B.T
    variances = (residual ** 2) @ (G ** 2).T
    floor = VARIANCE_REL_TOL * ((G ** 2) @ (scaled ** 2))
    degenerate = np.any(variances <= floor, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        t0 = np.max(np.abs(effects) / np.sqrt(variances), axis=1)
    t0[degenerate] = np.inf
    return t0


def replicate_weights(seed: int, replicate: int, n: int) -> np.ndarray:
    """Sinais de Rademacher da réplica `replicate`"""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(replicate,)))
    return 1.0 - 2.0 * rng.integers(0, 2, size=n)


def _block(
    start: int, size: int, seed: int, scaled: np.ndarray, G: np.ndarray, design: DesignBundle
) -> np.ndarray:
    weights = np.stack([replicate_weights(seed, r, scaled.shape[0]) for r in range(start, start + size)])
    return _max_statistics(weights, scaled, G, design)


def _prepare(fit: FittedAncova, design: DesignBundle, C: ContrastMatrix):
    C.check_cells(design.n_cells)
    scaled = scaled_residuals(fit, design)
    if np.all(np.abs(scaled) <= ZERO_RESIDUAL_TOL * max(1.0, float(np.abs(design.response).max()))):
        raise AllResidualsZero("every scaled residual is zero; the bootstrap distribution is undefined")
    G = C.C @ design.P_B[: design.n_cells]
    return scaled, G


def _check_degenerate(sample: np.ndarray, limit: float) -> int:
    n_degenerate = int(np.sum(np.isinf(sample)))
    if n_degenerate > limit * sample.shape[0]:
        raise DegenerateBootstrap(
            f"{n_degenerate} of {sample.shape[0]} bootstrap replicates have a zero contrast variance"
        )
    return n_degenerate


def bootstrap_distribution(
    fit: FittedAncova, design: DesignBundle, C: ContrastMatrix, settings: BootstrapSettings
) -> BootstrapDistribution:
    """
    Amostra bootstrap de T0* = max_l |T*_l|

    Réplicas com alguma variância nula entram como +inf (conservador) e
    são contadas; mais de `max_degenerate_fraction` delas é um erro.

    Raises:
        LeverageOne, AllResidualsZero, DegenerateBootstrap
    """
    scaled, G = _prepare(fit, design, C)

    n_blocks = math.ceil(settings.n_boot / settings.block_size)
    sizes = [min(settings.block_size, settings.n_boot - b * settings.block_size) for b in range(n_blocks)]

    if settings.n_jobs == 1:
        blocks = [_block(b * settings.block_size, size, settings.seed, scaled, G, design) for b, size in enumerate(sizes)]
    else:
        blocks = Parallel(n_jobs=settings.n_jobs)(
            delayed(_block)(b * settings.block_size, size, settings.seed, scaled, G, design) for b, size in enumerate(sizes)
        )
    sample = np.concatenate(blocks)
    n_degenerate = _check_degenerate(sample, settings.max_degenerate_fraction)
    if n_degenerate:
        logger.warning(f"{n_degenerate} degenerate bootstrap replicates recorded as +inf")

    sample.setflags(write=False)
    logger.debug(f"Bootstrap distribution: {settings.n_boot} replicates in {n_blocks} blocks")
    return BootstrapDistribution(sample=sample, n_degenerate=n_degenerate)


def exact_distribution(
    fit: FittedAncova, design: DesignBundle, C: ContrastMatrix, max_degenerate_fraction: float = 0.01
) -> BootstrapDistribution:
    """Distribuição condicional exata por enumeração dos 2^N vetores de sinais (N <= 20)"""
    if design.n_obs > MAX_ENUMERATION_N:
        raise ValueError(f"full enumeration needs N <= {MAX_ENUMERATION_N}, got {design.n_obs}")
    scaled, G = _prepare(fit, design, C)
    sample = _max_statistics(sign_vectors(design.n_obs), scaled, G, design)
    n_degenerate = _check_degenerate(sample, max_degenerate_fraction)
    sample.setflags(write=False)
    return BootstrapDistribution(sample=sample, n_degenerate=n_degenerate)


def empirical_quantile(sample: np.ndarray, level: float) -> float:
    """
    Quantil empírico por interpolação linear na posição 1 + (n - 1) * level

    Entradas +inf são aceitas; se a interpolação envolve uma delas o
    quantil é +inf.
    """
    if not 0.0 <= level <= 1.0:
        raise ValueError(f"level must be in [0, 1], got {level}")
    x = np.sort(np.asarray(sample, dtype=float))
    if x.shape[0] == 0:
        raise ValueError("empty sample")
    h = (x.shape[0] - 1) * level
    lo = int(math.floor(h))
    frac = h - lo
    if frac == 0.0 or lo + 1 >= x.shape[0]:
        return float(x[lo])
    if math.isinf(x[lo + 1]):
        return math.inf
    return float(x[lo] + frac * (x[lo + 1] - x[lo]))


def bootstrap_pvalues(sample: np.ndarray, statistics: np.ndarray) -> np.ndarray:
    """p_l = (1 + #{T0* >= |T_l|}) / (B + 1)"""
    x = np.sort(np.asarray(sample, dtype=float))
    exceed = x.shape[0] - np.searchsorted(x, np.abs(statistics), side="left")
    return (1.0 + exceed) / (x.shape[0] + 1.0)


def mctp_boot(
    fit: FittedAncova,
    design: DesignBundle,
    C: ContrastMatrix,
    alpha: float = 0.05,
    settings: Optional[BootstrapSettings] = None,
) -> MctpResult:
    """
    Procedimento de contrastes múltiplos com valor crítico bootstrap

    As estatísticas observadas e os intervalos usam a covariância HC0 do
    ajuste OLS; o valor crítico é o quantil empírico (1 - alpha) de T0*.

    Args:
        fit: Ajuste por sujeito
        design: Delineamento do ajuste
        C: Matriz de contrastes
        alpha: Nível de significância
        settings: Configuração do bootstrap

    Returns:
        MctpResult com decisões compatíveis
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    settings = settings or BootstrapSettings()

    effects, se, statistics = test_statistics(fit, C)
    R_hat = correlation(fit, C)
    distribution = bootstrap_distribution(fit, design, C, settings)

    crit = empirical_quantile(distribution.sample, 1.0 - alpha)
    p_raw = bootstrap_pvalues(distribution.sample, statistics)
    p_adj, reject, moved = reconcile(statistics, crit, p_raw, alpha)

    logger.info(
        f"Wild bootstrap MCTP: q={C.n_rows}, n_boot={settings.n_boot}, crit={crit:.4f}, "
        f"rejected {int(reject.sum())}/{C.n_rows}"
    )

    return MctpResult(
        contrast=C,
        effects=effects,
        std_errors=se,
        statistics=statistics,
        R_hat=R_hat,
        df_candidates=None,
        df_used=INFINITE_DF,
        crit=crit,
        p_adj=p_adj,
        ci_lower=effects - crit * se,
        ci_upper=effects + crit * se,
        reject=reject,
        global_stat=float(np.max(np.abs(statistics))),
        global_p=float(p_adj.min()),
        global_reject=bool(reject.any()),
        alpha=alpha,
        method=MethodName.BOOT,
        seed=settings.seed,
        n_boot=settings.n_boot,
        diagnostics={"degenerate_replicates": distribution.n_degenerate, "reconciled_p_values": moved},
    )
