import numpy as np
import pandas as pd
import pytest

from src.models.analysis_contract import VarianceMode
from src.services.design_service import AncovaDataset, build_design
from src.services.estimation_service import fit


@pytest.fixture
def welch_data():
    """Dois grupos de 3: médias 2 e 4, variâncias 1 e 4"""
    return AncovaDataset.from_groups([[1.0, 2.0, 3.0], [2.0, 4.0, 6.0]])


@pytest.fixture
def welch_design(welch_data):
    return build_design(welch_data)


@pytest.fixture
def welch_fit(welch_design):
    return fit(welch_design, VarianceMode.GROUP_WISE)


def make_ancova(seed, sizes=(8, 10, 12), n_covariates=2, sigmas=None, effects=None):
    """Conjunto de um fator com covariáveis N(7, 1) e erros normais"""
    rng = np.random.default_rng(seed)
    a = len(sizes)
    sigmas = np.ones(a) if sigmas is None else np.asarray(sigmas, dtype=float)
    effects = np.zeros(a) if effects is None else np.asarray(effects, dtype=float)
    responses, covariates = [], []
    for i, n in enumerate(sizes):
        m = rng.normal(7.0, 1.0, size=(n, n_covariates))
        slope = np.linspace(0.5, 1.5, n_covariates)
        responses.append(7.0 + effects[i] + m @ slope + sigmas[i] * rng.standard_normal(n))
        covariates.append(m)
    names = tuple(f"x{k + 1}" for k in range(n_covariates))
    return AncovaDataset.from_groups(responses, covariates if n_covariates else None, covariate_names=names)


@pytest.fixture
def ancova_data():
    return make_ancova(seed=11)


@pytest.fixture
def ancova_design(ancova_data):
    return build_design(ancova_data)


@pytest.fixture
def two_factor_frame():
    """Tabela 3 x 2 com uma covariável, campos como texto (igual ao CSV)"""
    rng = np.random.default_rng(5)
    records = []
    for dose in ("0", "10", "100"):
        for sex in ("F", "M"):
            for _ in range(6):
                x = rng.normal(10.0, 1.0)
                y = 5.0 + (1.5 if dose == "100" else 0.0) + 0.5 * x + rng.normal(0.0, 1.0)
                records.append({"dose": dose, "sex": sex, "x": repr(float(x)), "y": repr(float(y))})
    return pd.DataFrame.from_records(records)


@pytest.fixture
def ancova_factory():
    return make_ancova
