"""
Serviço de Delineamento do MCTP-ANCOVA

Constrói e valida conjuntos de dados, matrizes de delineamento, a estrutura
de caselas fatoriais e as matrizes de contrastes.
"""

import itertools
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..models.analysis_contract import ContrastKind
from .errors import (
    EmptyCell,
    InvalidContrast,
    InvalidGroupCount,
    LeverageOne,
    NonFiniteInput,
    NotFullCross,
    RankDeficient,
    SchemaError,
    UnknownFactor,
)

logger = logging.getLogger(__name__)

LEVERAGE_LIMIT = 1.0 - 1e-8
CONTRAST_SUM_TOL = 1e-8

Cell = Tuple[Any, ...]


def level_sort_key(level: Any) -> Tuple[int, Any]:
    """Níveis numéricos ordenam por valor, os demais como texto"""
    try:
        return (0, float(level))
    except (TypeError, ValueError):
        return (1, str(level))


def cell_sort_key(cell: Cell) -> Tuple[Tuple[int, Any], ...]:
    return tuple(level_sort_key(level) for level in cell)


def cell_label(cell: Cell) -> str:
    return ":".join(str(level) for level in cell)


@dataclass(frozen=True, eq=False)
class AncovaDataset:
    """
    Conjunto de dados de uma ANCOVA

    Uma linha por sujeito: resposta, identificador da casela (tupla com um
    nível por fator) e covariáveis.
    """
    response: np.ndarray
    groups: Tuple[Cell, ...]
    covariates: np.ndarray
    factor_names: Tuple[str, ...] = ()
    covariate_names: Tuple[str, ...] = ()

    def __post_init__(self):
        response = np.array(self.response, dtype=float).reshape(-1)
        groups = tuple(tuple(g) if isinstance(g, (tuple, list)) else (g,) for g in self.groups)
        covariates = np.array(self.covariates, dtype=float)
        if covariates.ndim == 1:
            covariates = covariates.reshape(-1, 1) if covariates.size else covariates.reshape(len(response), 0)

        n = response.shape[0]
        if n < 2:
            raise SchemaError(f"at least 2 observations are required, got {n}")
        if len(groups) != n or covariates.shape[0] != n:
            raise SchemaError(
                f"row counts differ: response={n}, groups={len(groups)}, covariates={covariates.shape[0]}"
            )
        widths = {len(g) for g in groups}
        if len(widths) != 1:
            raise SchemaError("every cell identifier must have the same number of factors")
        if not np.all(np.isfinite(response)):
            raise NonFiniteInput("response contains non-finite values")
        if not np.all(np.isfinite(covariates)):
            raise NonFiniteInput("covariates contain non-finite values")

        n_factors = widths.pop()
        factor_names = tuple(self.factor_names) or tuple(f"factor{k + 1}" for k in range(n_factors))
        covariate_names = tuple(self.covariate_names) or tuple(f"x{k + 1}" for k in range(covariates.shape[1]))
        if len(factor_names) != n_factors:
            raise SchemaError(f"expected {n_factors} factor names, got {len(factor_names)}")
        if len(covariate_names) != covariates.shape[1]:
            raise SchemaError(f"expected {covariates.shape[1]} covariate names, got {len(covariate_names)}")

        response.setflags(write=False)
        covariates.setflags(write=False)
        object.__setattr__(self, "response", response)
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "covariates", covariates)
        object.__setattr__(self, "factor_names", factor_names)
        object.__setattr__(self, "covariate_names", covariate_names)

        if len(set(groups)) < 2:
            raise InvalidGroupCount("at least 2 cells are required")

    @classmethod
    def from_groups(
        cls,
        responses: Sequence[Sequence[float]],
        covariates: Optional[Sequence[Any]] = None,
        labels: Optional[Sequence[Any]] = None,
        covariate_names: Sequence[str] = (),
    ) -> "AncovaDataset":
        """
        Monta um conjunto de dados de fator único a partir de listas por grupo

        Args:
            responses: Uma sequência de respostas para cada grupo
            covariates: Matrizes n_i x m por grupo (opcional)
            labels: Rótulos dos grupos (padrão 1..a)

        Raises:
            EmptyCell: Se algum grupo não tiver observações
        """
        labels = list(labels) if labels is not None else list(range(1, len(responses) + 1))
        blocks_y, blocks_m, groups = [], [], []
        for index, values in enumerate(responses):
            values = np.asarray(values, dtype=float).reshape(-1)
            if values.size == 0:
                raise EmptyCell(f"group {labels[index]} has no observations")
            blocks_y.append(values)
            groups.extend([(labels[index],)] * values.size)
            if covariates is not None:
                blocks_m.append(np.asarray(covariates[index], dtype=float).reshape(values.size, -1))
        y = np.concatenate(blocks_y)
        m = np.vstack(blocks_m) if covariates is not None else np.zeros((y.size, 0))
        return cls(response=y, groups=tuple(groups), covariates=m,
                   factor_names=("group",), covariate_names=tuple(covariate_names))

    @property
    def n_obs(self) -> int:
        return self.response.shape[0]


@dataclass(frozen=True, eq=False)
class DesignBundle:
    """
    Delineamento construído (ordem interna: caselas contíguas)

    `permutation[k]` é a linha de entrada que ocupa a posição interna k.
    """
    X: np.ndarray
    M: np.ndarray
    B: np.ndarray
    P_B: np.ndarray
    leverages: np.ndarray
    response: np.ndarray
    codes: np.ndarray
    cell_sizes: np.ndarray
    cells: Tuple[Cell, ...]
    cell_index: Dict[Cell, int]
    permutation: np.ndarray
    factor_names: Tuple[str, ...]
    factor_levels: Tuple[Tuple[Any, ...], ...]
    covariate_names: Tuple[str, ...]
    cell_starts: np.ndarray = field(repr=False, default=None)

    @property
    def n_obs(self) -> int:
        return self.X.shape[0]

    @property
    def n_cells(self) -> int:
        return self.X.shape[1]

    @property
    def n_covariates(self) -> int:
        return self.M.shape[1]

    @property
    def cell_labels(self) -> List[str]:
        return [cell_label(c) for c in self.cells]

    def cell_slice(self, i: int) -> slice:
        start = int(self.cell_starts[i])
        return slice(start, start + int(self.cell_sizes[i]))

    def unpermute(self, values: np.ndarray) -> np.ndarray:
        """Leva um vetor da ordem interna de volta à ordem de entrada"""
        values = np.asarray(values)
        out = np.empty_like(values)
        out[self.permutation] = values
        return out


def _freeze(*arrays: np.ndarray) -> None:
    for array in arrays:
        array.setflags(write=False)


def build_design(data: AncovaDataset) -> DesignBundle:
    """
    Constrói as matrizes do modelo Y = Xb + Mp + e

    As linhas são reordenadas de forma estável para que cada casela fique
    contígua; a permutação é mantida para os relatórios.

    Args:
        data: Conjunto de dados validado

    Returns:
        DesignBundle com X, M, B, P_B e alavancas

    Raises:
        RankDeficient: Se B = (X, M) não tiver posto coluna completo
        LeverageOne: Se alguma alavanca for (numericamente) igual a 1
    """
    cells = tuple(sorted(set(data.groups), key=cell_sort_key))
    cell_index = {cell: i for i, cell in enumerate(cells)}
    raw_codes = np.array([cell_index[g] for g in data.groups], dtype=int)
    permutation = np.argsort(raw_codes, kind="stable")

    codes = raw_codes[permutation]
    response = data.response[permutation].copy()
    M = data.covariates[permutation].copy()

    n, a, m = response.shape[0], len(cells), M.shape[1]
    X = np.zeros((n, a))
    X[np.arange(n), codes] = 1.0
    cell_sizes = X.sum(axis=0).astype(int)
    cell_starts = np.concatenate([[0], np.cumsum(cell_sizes)[:-1]])

    B = np.hstack([X, M])
    rank = np.linalg.matrix_rank(B)
    if rank < a + m:
        raise RankDeficient(
            f"design matrix (X, M) has rank {rank} < {a + m}; "
            f"a covariate may be constant within every cell or collinear"
        )

    BtB = B.T @ B
    try:
        P_B = np.linalg.solve(BtB, B.T)
    except np.linalg.LinAlgError as e:
        raise RankDeficient(f"normal equations are singular: {e}")
    leverages = np.einsum("ij,ji->i", B, P_B)

    worst = int(np.argmax(leverages))
    if leverages[worst] >= LEVERAGE_LIMIT:
        raise LeverageOne(
            f"observation {int(permutation[worst]) + 1} in cell {cell_label(cells[codes[worst]])} "
            f"has leverage {leverages[worst]:.6f}; at least two observations per cell are needed"
        )

    n_factors = len(cells[0])
    factor_levels = tuple(
        tuple(sorted({cell[k] for cell in cells}, key=level_sort_key)) for k in range(n_factors)
    )

    _freeze(X, M, B, P_B, leverages, response, codes, cell_sizes, cell_starts, permutation)
    logger.debug(f"Design built: N={n}, a={a}, m={m}, cells={[cell_label(c) for c in cells]}")

    return DesignBundle(
        X=X,
        M=M,
        B=B,
        P_B=P_B,
        leverages=leverages,
        response=response,
        codes=codes,
        cell_sizes=cell_sizes,
        cells=cells,
        cell_index=cell_index,
        permutation=permutation,
        factor_names=data.factor_names,
        factor_levels=factor_levels,
        covariate_names=data.covariate_names,
        cell_starts=cell_starts,
    )


@dataclass(frozen=True, eq=False)
class ContrastMatrix:
    """Matriz de contrastes q x a com rótulos por linha"""
    C: np.ndarray
    row_labels: Tuple[str, ...]
    kind: ContrastKind

    def __post_init__(self):
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        if C.ndim != 2 or C.shape[0] < 1 or C.shape[1] < 2:
            raise InvalidContrast(f"contrast matrix must be q x a with q >= 1 and a >= 2, got {C.shape}")
        if not np.all(np.isfinite(C)):
            raise InvalidContrast("contrast matrix contains non-finite entries")
        labels = tuple(str(label) for label in self.row_labels)
        if len(labels) != C.shape[0]:
            raise InvalidContrast(f"expected {C.shape[0]} row labels, got {len(labels)}")

        sums = np.abs(C.sum(axis=1))
        bad = np.flatnonzero(sums > CONTRAST_SUM_TOL)
        if bad.size:
            raise InvalidContrast(f"row '{labels[bad[0]]}' does not sum to zero (sum={C[bad[0]].sum():.3g})")
        zero = np.flatnonzero(np.all(C == 0.0, axis=1))
        if zero.size:
            raise InvalidContrast(f"row '{labels[zero[0]]}' is all zeros")

        C.setflags(write=False)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "row_labels", labels)

    @property
    def n_rows(self) -> int:
        return self.C.shape[0]

    def check_cells(self, a: int) -> None:
        if self.C.shape[1] != a:
            raise InvalidContrast(f"contrast matrix has {self.C.shape[1]} columns but the design has {a} cells")


def contrast(kind: ContrastKind, a: int, labels: Optional[Sequence[str]] = None) -> ContrastMatrix:
    """
    Matrizes de contrastes padrão

    Dunnett compara cada grupo com o primeiro, Tukey compara todos os pares e
    GrandMean compara cada grupo com a média geral (I - J/a).

    Raises:
        InvalidGroupCount: Se a < 2
    """
    if a < 2:
        raise InvalidGroupCount(f"{kind.value} contrasts need at least 2 groups, got {a}")
    labels = [str(label) for label in labels] if labels is not None else [str(i + 1) for i in range(a)]

    if kind == ContrastKind.DUNNETT:
        C = np.zeros((a - 1, a))
        C[:, 0] = -1.0
        C[np.arange(a - 1), np.arange(1, a)] = 1.0
        rows = [f"{labels[j]} - {labels[0]}" for j in range(1, a)]
    elif kind == ContrastKind.TUKEY:
        pairs = list(itertools.combinations(range(a), 2))
        C = np.zeros((len(pairs), a))
        for r, (i, j) in enumerate(pairs):
            C[r, i] = -1.0
            C[r, j] = 1.0
        rows = [f"{labels[j]} - {labels[i]}" for i, j in pairs]
    elif kind == ContrastKind.GRAND_MEAN:
        C = np.eye(a) - np.full((a, a), 1.0 / a)
        rows = list(labels)
    else:
        raise InvalidContrast(f"'{kind.value}' is not a generated contrast type")

    return ContrastMatrix(C=C, row_labels=tuple(rows), kind=kind)


def user_contrast(C: Any, row_labels: Optional[Sequence[str]] = None) -> ContrastMatrix:
    C = np.atleast_2d(np.asarray(C, dtype=float))
    labels = row_labels if row_labels is not None else [f"C{r + 1}" for r in range(C.shape[0])]
    return ContrastMatrix(C=C, row_labels=tuple(labels), kind=ContrastKind.USER_DEFINED)


@dataclass(frozen=True, eq=False)
class EffectSpec:
    """Efeito fatorial: um fator (efeito principal) ou vários (interação)"""
    factors: Tuple[str, ...]

    @property
    def is_interaction(self) -> bool:
        return len(self.factors) > 1


def _drop_parallel_rows(C: np.ndarray, labels: List[str]) -> Tuple[np.ndarray, List[str]]:
    """Remove linhas que são múltiplos escalares de uma linha anterior"""
    kept: List[int] = []
    for r in range(C.shape[0]):
        row = C[r]
        norm = np.linalg.norm(row)
        if norm < 1e-12:
            continue
        duplicate = False
        for k in kept:
            other = C[k]
            cosine = abs(row @ other) / (norm * np.linalg.norm(other))
            if cosine > 1.0 - 1e-10:
                duplicate = True
                break
        if not duplicate:
            kept.append(r)
    return C[kept], [labels[k] for k in kept]


def factorial_contrast(
    effect: EffectSpec,
    factor_names: Sequence[str],
    factor_levels: Sequence[Sequence[Any]],
    cells: Optional[Sequence[Cell]] = None,
    base: ContrastKind = ContrastKind.GRAND_MEAN,
) -> ContrastMatrix:
    """
    Contrastes de efeito principal ou interação num delineamento cruzado

    As caselas seguem a ordem lexicográfica das tuplas de níveis, portanto o
    primeiro fator varia mais devagar e o produto de Kronecker segue a ordem
    dos fatores.

    Args:
        effect: Fatores do efeito
        factor_names: Nomes de todos os fatores
        factor_levels: Níveis (ordenados) de cada fator
        cells: Caselas observadas; devem formar o cruzamento completo
        base: Contraste base do fator de um efeito principal

    Raises:
        UnknownFactor: Se o efeito citar um fator inexistente
        NotFullCross: Se faltar alguma casela do cruzamento
    """
    names = list(factor_names)
    for name in effect.factors:
        if name not in names:
            raise UnknownFactor(f"unknown factor '{name}' (available: {names})")
    if not effect.factors:
        raise UnknownFactor("effect must name at least one factor")

    levels = [list(lv) for lv in factor_levels]
    if cells is not None:
        grid = set(itertools.product(*levels))
        observed = set(tuple(c) for c in cells)
        missing = sorted(grid - observed, key=cell_sort_key)
        if missing or observed - grid:
            first = cell_label(missing[0]) if missing else "none"
            raise NotFullCross(f"cells do not form a full cross of the factor levels; missing {first}")

    positions = [names.index(name) for name in effect.factors]

    if not effect.is_interaction and len(names) == 1:
        return contrast(base, len(levels[0]), labels=levels[0])

    blocks = []
    for k, lv in enumerate(levels):
        size = len(lv)
        if k in positions:
            if effect.is_interaction:
                blocks.append(np.eye(size) - np.full((size, size), 1.0 / size))
            else:
                blocks.append(contrast(base, size, labels=lv).C)
        else:
            blocks.append(np.full((1, size), 1.0 / size))

    C = blocks[0]
    for block in blocks[1:]:
        C = np.kron(C, block)

    if effect.is_interaction:
        combos = itertools.product(*[levels[k] for k in sorted(positions)])
        labels = [":".join(f"{names[k]}={level}" for k, level in zip(sorted(positions), combo)) for combo in combos]
        C, labels = _drop_parallel_rows(C, labels)
        # coeficientes positivos somam 1 (2x2: [1/2, -1/2, -1/2, 1/2])
        C = C / (np.abs(C).sum(axis=1, keepdims=True) / 2.0)
    else:
        labels = [f"{names[positions[0]]}: {label}"
                  for label in contrast(base, len(levels[positions[0]]), labels=levels[positions[0]]).row_labels]

    logger.debug(f"Factorial contrast for {effect.factors}: {C.shape[0]} rows")
    return ContrastMatrix(C=C, row_labels=tuple(labels), kind=ContrastKind.KRONECKER_COMPOSITE)


def design_contrast(
    design: DesignBundle,
    effect: Optional[EffectSpec] = None,
    kind: ContrastKind = ContrastKind.DUNNETT,
) -> ContrastMatrix:
    """
    Contraste para um delineamento já construído

    Sem efeito, aplica `kind` diretamente sobre todas as caselas; com efeito,
    `kind` é a base dos efeitos principais.
    """
    if effect is None:
        return contrast(kind, design.n_cells, labels=design.cell_labels)
    return factorial_contrast(
        effect,
        design.factor_names,
        design.factor_levels,
        cells=design.cells,
        base=kind,
    )
