"""
Serviço de Distribuições Multivariadas do MCTP-ANCOVA

Probabilidades de retângulos equicoordenados P(max|T_l| <= c) para T com
distribuição N(0, R) ou t(df, R, 0), quantis equicoordenados e p-valores
ajustados pela multiplicidade.

A integração usa condicionamento sequencial sobre o fator de Cholesky com
reordenação de variáveis (estilo Genz) e quasi-Monte Carlo randomizado:
K deslocamentos aleatórios de um conjunto de pontos de Sobol.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from joblib import Parallel, delayed
from scipy import optimize, special, stats
from scipy.stats import qmc

from .errors import NoConvergence, NotPositiveSemidefinite

logger = logging.getLogger(__name__)

INFINITE_DF = math.inf
PSD_TOL = 1e-8
PIVOT_TOL = 1e-10
UNIFORM_CLIP = 1e-15

DEFAULT_SHIFTS = 12
DEFAULT_SAMPLES = 4096
DEFAULT_MAX_SAMPLES = 65536
DEFAULT_TOL = 1e-3


@dataclass(frozen=True, eq=False)
class CorrelationMatrix:
    """Matriz de correlação validada (possivelmente reparada)"""
    R: np.ndarray
    cholesky: np.ndarray
    repaired: bool = False

    @property
    def dim(self) -> int:
        return self.R.shape[0]

    @classmethod
    def from_matrix(cls, R) -> "CorrelationMatrix":
        """
        Valida e, se preciso, repara uma matriz de correlação

        Autovalores em (-1e-8, 0) são truncados em zero e a diagonal é
        renormalizada; violações maiores são um erro.

        Raises:
            NotPositiveSemidefinite: Se R não for (quase) semidefinida positiva
        """
        R = np.atleast_2d(np.asarray(R, dtype=float))
        if R.shape[0] != R.shape[1]:
            raise NotPositiveSemidefinite(f"correlation matrix must be square, got {R.shape}")
        if not np.all(np.isfinite(R)):
            raise NotPositiveSemidefinite("correlation matrix has non-finite entries")
        if not np.allclose(R, R.T, atol=1e-12):
            raise NotPositiveSemidefinite("correlation matrix is not symmetric")
        if np.any(np.abs(np.diag(R) - 1.0) >= 1e-12):
            raise NotPositiveSemidefinite("correlation matrix must have a unit diagonal")

        R = (R + R.T) / 2.0
        eigval, eigvec = np.linalg.eigh(R)
        repaired = False
        if eigval[0] < 0.0:
            if eigval[0] <= -PSD_TOL:
                raise NotPositiveSemidefinite(f"correlation matrix has eigenvalue {eigval[0]:.3g}")
            clipped = (eigvec * np.clip(eigval, 0.0, None)) @ eigvec.T
            scale = np.sqrt(np.diag(clipped))
            R = clipped / np.outer(scale, scale)
            R = (R + R.T) / 2.0
            np.fill_diagonal(R, 1.0)
            repaired = True
            logger.debug(f"Correlation matrix repaired (min eigenvalue {eigval[0]:.3g})")

        L = semidefinite_cholesky(R)
        R.setflags(write=False)
        L.setflags(write=False)
        return cls(R=R, cholesky=L, repaired=repaired)

    @classmethod
    def identity(cls, q: int) -> "CorrelationMatrix":
        return cls.from_matrix(np.eye(q))


@dataclass(frozen=True)
class ProbabilityEstimate:
    value: float
    std_error: float
    n_samples: int


@dataclass(frozen=True)
class QuantileRequest:
    """Pedido de quantil equicoordenado (df = inf para o caso normal)"""
    level: float
    R: CorrelationMatrix
    df: float = INFINITE_DF
    seed: int = 1
    tol: float = DEFAULT_TOL
    n_samples: int = DEFAULT_SAMPLES
    max_samples: int = DEFAULT_MAX_SAMPLES
    n_shifts: int = DEFAULT_SHIFTS
    one_sided: bool = False
    n_jobs: int = 1

    def __post_init__(self):
        if not 0.0 < self.level < 1.0:
            raise ValueError(f"level must be in (0, 1), got {self.level}")
        if self.tol <= 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        validate_df(self.df)


@dataclass(frozen=True)
class QuantileResult:
    value: float
    probability: float
    std_error: float
    n_samples: int


def validate_df(df: float) -> None:
    if df != INFINITE_DF and (df < 1 or int(df) != df):
        raise ValueError(f"df must be a positive integer or infinite, got {df}")


def semidefinite_cholesky(R: np.ndarray) -> np.ndarray:
    """Cholesky que tolera pivôs nulos (colunas zeradas)"""
    q = R.shape[0]
    L = np.zeros_like(R)
    for i in range(q):
        pivot = R[i, i] - L[i, :i] @ L[i, :i]
        if pivot > PIVOT_TOL:
            L[i, i] = math.sqrt(pivot)
            L[i + 1:, i] = (R[i + 1:, i] - L[i + 1:, :i] @ L[i, :i]) / L[i, i]
    return L


def _reorder(R: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Reordena as variáveis (mais truncada primeiro) e calcula o Cholesky

    A cada passo escolhe, entre as restantes, a variável com menor
    probabilidade condicional do intervalo dado o valor esperado das
    anteriores.
    """
    q = R.shape[0]
    cov = R.copy()
    a, b = lower.copy(), upper.copy()
    L = np.zeros((q, q))
    y = np.zeros(q)

    for i in range(q):
        shift = L[i:, :i] @ y[:i]
        var = np.diag(cov)[i:] - np.sum(L[i:, :i] ** 2, axis=1)
        sd = np.sqrt(np.clip(var, 0.0, None))
        with np.errstate(divide="ignore", invalid="ignore"):
            prob = np.where(
                sd > PIVOT_TOL,
                special.ndtr((b[i:] - shift) / sd) - special.ndtr((a[i:] - shift) / sd),
                1.0,
            )
        j = i + int(np.argmin(prob))

        if j != i:
            cov[[i, j], :] = cov[[j, i], :]
            cov[:, [i, j]] = cov[:, [j, i]]
            a[[i, j]] = a[[j, i]]
            b[[i, j]] = b[[j, i]]
            L[[i, j], :] = L[[j, i], :]

        pivot = cov[i, i] - L[i, :i] @ L[i, :i]
        if pivot > PIVOT_TOL:
            L[i, i] = math.sqrt(pivot)
            L[i + 1:, i] = (cov[i + 1:, i] - L[i + 1:, :i] @ L[i, :i]) / L[i, i]
            s = L[i, :i] @ y[:i]
            lo, hi = (a[i] - s) / L[i, i], (b[i] - s) / L[i, i]
            mass = special.ndtr(hi) - special.ndtr(lo)
            if mass > 1e-300:
                y[i] = (stats.norm.pdf(lo) - stats.norm.pdf(hi)) / mass
        # pivô nulo: variável determinada pelas anteriores

    return L, a, b


def _conditional_product(
    L: np.ndarray, lower: np.ndarray, upper: np.ndarray, w: np.ndarray, scale: np.ndarray
) -> np.ndarray:
    """Integrando de Genz avaliado em todos os pontos de uma vez"""
    n_points = w.shape[0]
    q = L.shape[0]
    f = np.ones(n_points)
    y = np.zeros((n_points, q))

    for i in range(q):
        s = y[:, :i] @ L[i, :i]
        lo = lower[i] * scale - s
        hi = upper[i] * scale - s
        if L[i, i] > 0.0:
            d = special.ndtr(lo / L[i, i])
            e = special.ndtr(hi / L[i, i])
            f *= e - d
            if i < q - 1:
                u = np.clip(d + w[:, i] * (e - d), UNIFORM_CLIP, 1.0 - UNIFORM_CLIP)
                y[:, i] = special.ndtri(u)
        else:
            f *= (lo <= 0.0) & (hi >= 0.0)
    return f


def _shift_estimate(
    base: np.ndarray, shift: np.ndarray, L: np.ndarray, lower: np.ndarray, upper: np.ndarray, df: float
) -> float:
    points = np.mod(base + shift, 1.0)
    if df == INFINITE_DF:
        scale = np.ones(points.shape[0])
        w = points
    else:
        u = np.clip(points[:, 0], UNIFORM_CLIP, 1.0 - UNIFORM_CLIP)
        scale = stats.chi.ppf(u, df) / math.sqrt(df)
        w = points[:, 1:]
    return float(np.mean(_conditional_product(L, lower, upper, w, scale)))


def _univariate(c: float, df: float, one_sided: bool) -> float:
    dist = stats.norm if df == INFINITE_DF else stats.t(df)
    if one_sided:
        return float(dist.cdf(c))
    return float(2.0 * dist.cdf(c) - 1.0)


def rect_prob(
    c: float,
    df: float,
    R: CorrelationMatrix,
    seed: int = 1,
    n_samples: int = DEFAULT_SAMPLES,
    n_shifts: int = DEFAULT_SHIFTS,
    one_sided: bool = False,
    n_jobs: int = 1,
) -> ProbabilityEstimate:
    """
    P(|T_1| <= c, ..., |T_q| <= c) por QMC randomizado

    O resultado é função determinística de (entradas, seed): os
    deslocamentos são combinados pelo índice, não pela ordem de conclusão.

    Args:
        c: Limite equicoordenado (> 0)
        df: Graus de liberdade (inteiro) ou inf para a normal
        R: Matriz de correlação
        seed: Semente dos deslocamentos aleatórios
        n_samples: Pontos por deslocamento (potência de 2)
        n_shifts: Número de deslocamentos (K)
        one_sided: Usa o retângulo (-inf, c] em vez de [-c, c]

    Returns:
        ProbabilityEstimate com valor e erro padrão de Monte Carlo
    """
    validate_df(df)
    q = R.dim
    if c <= 0.0 and not one_sided:
        return ProbabilityEstimate(0.0, 0.0, 0)
    if not np.isfinite(c):
        return ProbabilityEstimate(1.0, 0.0, 0)
    if q == 1:
        return ProbabilityEstimate(_univariate(c, df, one_sided), 0.0, 0)

    upper = np.full(q, float(c))
    lower = np.full(q, -np.inf) if one_sided else -upper
    L, lower, upper = _reorder(R.R, lower, upper)

    dim = q - 1 if df == INFINITE_DF else q
    m = max(int(math.ceil(math.log2(max(n_samples, 2)))), 1)
    base = qmc.Sobol(d=dim, scramble=False).random_base2(m)
    shifts = np.random.default_rng(seed).random((n_shifts, dim))

    if n_jobs == 1:
        estimates = [_shift_estimate(base, shift, L, lower, upper, df) for shift in shifts]
    else:
        estimates = Parallel(n_jobs=n_jobs)(
            delayed(_shift_estimate)(base, shift, L, lower, upper, df) for shift in shifts
        )
    estimates = np.asarray(estimates)

    value = float(np.clip(estimates.mean(), 0.0, 1.0))
    std_error = float(estimates.std(ddof=1) / math.sqrt(n_shifts)) if n_shifts > 1 else 0.0
    return ProbabilityEstimate(value, std_error, base.shape[0] * n_shifts)


def equi_quantile(req: QuantileRequest) -> QuantileResult:
    """
    Quantil equicoordenado c com P(max|T_l| <= c) = level

    O intervalo inicial vai do quantil univariado não ajustado ao de
    Bonferroni; o refinamento usa Brent sobre a probabilidade estimada com
    números aleatórios comuns. Se o erro padrão no ponto final exceder a
    tolerância, o número de pontos é dobrado até `max_samples`.

    Raises:
        NoConvergence: Se a tolerância não for atingida com `max_samples`
    """
    q = req.R.dim
    dist = stats.norm if req.df == INFINITE_DF else stats.t(req.df)
    alpha = 1.0 - req.level
    if req.one_sided:
        lo, hi = float(dist.ppf(req.level)), float(dist.ppf(1.0 - alpha / q))
    else:
        lo, hi = float(dist.ppf(1.0 - alpha / 2.0)), float(dist.ppf(1.0 - alpha / (2.0 * q)))

    if q == 1:
        return QuantileResult(lo, req.level, 0.0, 0)

    n_samples = req.n_samples
    while True:
        def gap(c: float) -> float:
            return rect_prob(c, req.df, req.R, req.seed, n_samples, req.n_shifts, req.one_sided, req.n_jobs).value - req.level

        lo_c, hi_c = lo, hi
        width = max(hi - lo, 0.5)
        # ruído de MC pode tirar o nível do intervalo teórico
        while gap(lo_c) > 0.0:
            lo_c = lo_c / 2.0 if not req.one_sided else lo_c - width
        while gap(hi_c) < 0.0:
            hi_c += width

        root = float(optimize.brentq(gap, lo_c, hi_c, xtol=1e-6))
        estimate = rect_prob(root, req.df, req.R, req.seed, n_samples, req.n_shifts, req.one_sided, req.n_jobs)
        if abs(estimate.value - req.level) <= req.tol and estimate.std_error <= req.tol:
            logger.debug(
                f"Equicoordinate quantile q={q}, df={req.df}: c={root:.6f} "
                f"(P={estimate.value:.6f} +/- {estimate.std_error:.2e}, {estimate.n_samples} points)"
            )
            return QuantileResult(root, estimate.value, estimate.std_error, estimate.n_samples)

        if n_samples * 2 > req.max_samples:
            raise NoConvergence(
                f"equicoordinate quantile did not reach tol={req.tol} "
                f"(P={estimate.value:.6f} +/- {estimate.std_error:.2e}) with {n_samples} points per shift"
            )
        n_samples *= 2
        logger.debug(f"Increasing QMC points per shift to {n_samples}")


def adj_pvalues(
    t_obs,
    df: float,
    R: CorrelationMatrix,
    seed: int = 1,
    n_samples: int = DEFAULT_SAMPLES,
    n_shifts: int = DEFAULT_SHIFTS,
    one_sided: bool = False,
    n_jobs: int = 1,
) -> np.ndarray:
    """
    p-valores ajustados p_l = 1 - P(max|T| <= |t_l|)

    O p-valor global é o mínimo dos ajustados.
    """
    t_obs = np.asarray(t_obs, dtype=float).reshape(-1)
    if t_obs.shape[0] != R.dim:
        raise ValueError(f"expected {R.dim} statistics, got {t_obs.shape[0]}")
    if not np.all(np.isfinite(t_obs)):
        raise ValueError("observed statistics must be finite")

    values = t_obs if one_sided else np.abs(t_obs)
    pvalues = np.empty_like(values)
    cache = {}
    for k, value in enumerate(values):
        key = float(value)
        if key not in cache:
            prob = rect_prob(key, df, R, seed, n_samples, n_shifts, one_sided, n_jobs).value
            cache[key] = float(np.clip(1.0 - prob, 0.0, 1.0))
        pvalues[k] = cache[key]
    return pvalues
