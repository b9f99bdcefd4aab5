"""
Serviço de Estimação do MCTP-ANCOVA

Estimadores OLS/GLS dos efeitos de tratamento e das covariáveis,
estimadores de variância por grupo e por sujeito e as matrizes sanduíche
Psi = D Sigma D' e Xi = A Sigma A'.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from ..models.analysis_contract import VarianceMode
from .design_service import DesignBundle
from .errors import InsufficientReplication, RankDeficient

logger = logging.getLogger(__name__)

RANK_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class FittedAncova:
    """
    Modelo ajustado (imutável)

    Os vetores por observação seguem a ordem interna do delineamento.
    """
    b_hat: np.ndarray
    p_hat: np.ndarray
    Psi_hat: np.ndarray
    Xi_hat: np.ndarray
    D: np.ndarray
    A: np.ndarray
    sigma_diag: np.ndarray
    residuals: np.ndarray
    mode: VarianceMode
    sigma2_group: Optional[np.ndarray] = None
    dfs_group: Optional[np.ndarray] = None
    eps2_subject: Optional[np.ndarray] = None
    residual_df: Optional[int] = None
    warnings: Tuple[str, ...] = ()


def numerical_rank(matrix: np.ndarray, tol: float = RANK_TOL) -> int:
    """Posto via SVD com tolerância relativa ao maior valor singular"""
    if matrix.size == 0:
        return 0
    singular = np.linalg.svd(matrix, compute_uv=False)
    if singular[0] == 0.0:
        return 0
    return int(np.sum(singular > tol * singular[0]))


def group_variances(design: DesignBundle, response: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Estimador não viesado da variância de cada casela

    sigma2_i = Y_i' Q_i Y_i / (n_i - 1 - rank(M_i)), com Q_i o projetor
    residual do submodelo B_i = (1, M_i) da casela.

    Args:
        design: Delineamento construído
        response: Resposta na ordem interna

    Returns:
        (sigma2, dfs) com um valor por casela

    Raises:
        InsufficientReplication: Se algum denominador for menor que 1
    """
    a = design.n_cells
    sigma2 = np.zeros(a)
    dfs = np.zeros(a, dtype=int)

    for i in range(a):
        rows = design.cell_slice(i)
        y_i = response[rows]
        m_i = design.M[rows]
        n_i = y_i.shape[0]
        df = n_i - 1 - numerical_rank(m_i)
        if df < 1:
            raise InsufficientReplication(
                f"cell {design.cell_labels[i]} has n={n_i} observations and "
                f"{n_i - 1 - df} effective covariates; its variance cannot be estimated"
            )
        if m_i.shape[1] == 0:
            residual = y_i - y_i.mean()
        else:
            B_i = np.hstack([np.ones((n_i, 1)), m_i])
            coef, *_ = np.linalg.lstsq(B_i, y_i, rcond=None)
            residual = y_i - B_i @ coef
        sigma2[i] = float(residual @ residual) / df
        dfs[i] = df

    return sigma2, dfs


def subject_variances(design: DesignBundle, response: np.ndarray) -> np.ndarray:
    """Quadrados dos resíduos do ajuste OLS completo (diagonal de Sigma_I)"""
    residual = response - design.B @ (design.P_B @ response)
    return residual ** 2


def generating_matrices(design: DesignBundle, weights: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Matrizes geradoras D (a x N) e A (m x N) com b = DY e p = AY

    `weights` é a diagonal de Sigma^{-1}; pesos constantes reproduzem o OLS.
    """
    X, M = design.X, design.M
    n, m = design.n_obs, design.n_covariates

    XtWX = X.T @ (weights[:, None] * X)
    H = (X.T * weights) / np.diag(XtWX)[:, None]

    if m == 0:
        return H, np.zeros((0, n))

    # P e Q: projetores do modelo só com as caselas
    P = X @ (X.T / design.cell_sizes[:, None])
    QW = (np.eye(n) - P) * weights
    try:
        A = np.linalg.solve(M.T @ QW @ M, M.T @ QW)
    except np.linalg.LinAlgError as e:
        raise RankDeficient(f"covariate block is singular after removing cell means: {e}")
    D = H - H @ M @ A
    return D, A


def _sandwich(G: np.ndarray, sigma_diag: np.ndarray) -> np.ndarray:
    V = (G * sigma_diag) @ G.T
    return (V + V.T) / 2.0


def fit(design: DesignBundle, mode: VarianceMode = VarianceMode.GROUP_WISE) -> FittedAncova:
    """
    Ajusta o modelo em duas etapas

    1. Estima Sigma (por grupo, por sujeito ou homocedástico).
    2. Forma D e A com Sigma estimado e calcula b, p, Psi e Xi.

    GroupWise usa GLS factível com pesos 1/sigma2_i (uma iteração);
    SubjectWise usa OLS com a matriz sanduíche HC0; Homoscedastic usa OLS com
    a variância combinada RSS / (N - a - m).

    Raises:
        InsufficientReplication: Réplicas insuficientes numa casela
        RankDeficient: Bloco de covariáveis singular
    """
    y = design.response
    n, a, m = design.n_obs, design.n_cells, design.n_covariates
    notes = []
    sigma2 = dfs = eps2 = None
    residual_df = None

    if mode == VarianceMode.GROUP_WISE:
        sigma2, dfs = group_variances(design, y)
        sigma_diag = sigma2[design.codes]
        if np.all(sigma2 > 0):
            weights = 1.0 / sigma_diag
            weights = weights / weights.max()
        else:
            if m > 0:
                notes.append("zero within-cell variance: GLS weights replaced by OLS weights")
                logger.warning(f"Cells with zero variance {np.flatnonzero(sigma2 <= 0).tolist()}, using OLS weights")
            weights = np.ones(n)
    elif mode == VarianceMode.SUBJECT_WISE:
        eps2 = subject_variances(design, y)
        sigma_diag = eps2
        weights = np.ones(n)
    else:
        residual_df = n - a - m
        if residual_df < 1:
            raise InsufficientReplication(f"no residual degrees of freedom (N={n}, a={a}, m={m})")
        rss = float(subject_variances(design, y).sum())
        sigma_diag = np.full(n, rss / residual_df)
        weights = np.ones(n)

    D, A = generating_matrices(design, weights)
    b_hat = D @ y
    p_hat = A @ y
    Psi_hat = _sandwich(D, sigma_diag)
    Xi_hat = _sandwich(A, sigma_diag)
    residuals = y - design.X @ b_hat - design.M @ p_hat

    for array in (b_hat, p_hat, Psi_hat, Xi_hat, D, A, sigma_diag, residuals):
        array.setflags(write=False)

    logger.debug(f"Fitted ANCOVA ({mode.value}): b_hat={np.round(b_hat, 4).tolist()}")

    return FittedAncova(
        b_hat=b_hat,
        p_hat=p_hat,
        Psi_hat=Psi_hat,
        Xi_hat=Xi_hat,
        D=D,
        A=A,
        sigma_diag=sigma_diag,
        residuals=residuals,
        mode=mode,
        sigma2_group=sigma2,
        dfs_group=dfs,
        eps2_subject=eps2,
        residual_df=residual_df,
        warnings=tuple(notes),
    )
