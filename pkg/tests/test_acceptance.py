"""
Testes de aceitação: oráculos exatos e estudos de Monte Carlo

Os estudos de simulação são marcados como `slow` e rodam com `pytest -m slow`.
"""

import json
import math

import numpy as np
import pytest
from scipy import integrate, optimize, stats

from src.models.analysis_contract import ContrastKind, MethodName, VarianceMode
from src.models.simulation_contract import Alternative, SimSetting, SimulationPlan, VarianceStructure
from src.services import bootstrap_service, inference_service, simulation_service
from src.services.bootstrap_service import BootstrapSettings
from src.services.design_service import AncovaDataset, build_design, contrast, design_contrast
from src.services.estimation_service import fit
from src.services.mvt_service import INFINITE_DF, CorrelationMatrix, QuantileRequest, equi_quantile


def _independent_quantile(q, df, level=0.95):
    """Quantil equicoordenado exato para R = I"""
    if df == INFINITE_DF:
        return stats.norm.ppf((1.0 + level ** (1.0 / q)) / 2.0)

    def prob(c):
        def integrand(s):
            return (2.0 * stats.norm.cdf(c * s) - 1.0) ** q * stats.chi.pdf(s * math.sqrt(df), df) * math.sqrt(df)
        return integrate.quad(integrand, 0.0, np.inf)[0] - level

    return optimize.brentq(prob, 0.5, 10.0, xtol=1e-8)


class TestExactOracles:
    """Equivalências exatas com fórmulas fechadas"""

    def test_welch_statistic_and_df(self):
        rng = np.random.default_rng(2024)
        C = contrast(ContrastKind.DUNNETT, 2)
        for _ in range(100):
            n1, n2 = rng.integers(2, 15, size=2)
            first = rng.normal(0.0, rng.uniform(0.5, 3.0), size=n1)
            second = rng.normal(1.0, rng.uniform(0.5, 3.0), size=n2)
            design = build_design(AncovaDataset.from_groups([first, second]))
            fitted = fit(design, VarianceMode.GROUP_WISE)

            _, _, T = inference_service.test_statistics(fitted, C)
            nu, _ = inference_service.box_dfs(fitted, C, design)

            v1, v2 = first.var(ddof=1) / n1, second.var(ddof=1) / n2
            welch_t = (second.mean() - first.mean()) / math.sqrt(v1 + v2)
            welch_df = (v1 + v2) ** 2 / (v1 ** 2 / (n1 - 1) + v2 ** 2 / (n2 - 1))
            assert T[0] == pytest.approx(welch_t, rel=1e-10, abs=1e-10)
            assert nu[0] == pytest.approx(welch_df, rel=1e-10)

    def test_homoscedastic_matches_normal_equations(self):
        rng = np.random.default_rng(77)
        for _ in range(50):
            a = int(rng.integers(2, 5))
            m = int(rng.integers(0, 5))
            sizes = rng.integers(m + 3, m + 8, size=a)
            if sizes.sum() > 50:
                continue
            responses = [rng.normal(size=n) for n in sizes]
            covariates = [rng.normal(size=(n, m)) for n in sizes] if m else None
            design = build_design(AncovaDataset.from_groups(responses, covariates=covariates))
            result = fit(design, VarianceMode.HOMOSCEDASTIC)

            B, y = design.B, design.response
            beta = np.linalg.solve(B.T @ B, B.T @ y)
            np.testing.assert_allclose(result.b_hat, beta[:a], atol=1e-10)
            np.testing.assert_allclose(result.p_hat, beta[a:], atol=1e-10)

    @pytest.mark.parametrize("q", [1, 2, 3])
    @pytest.mark.parametrize("df", [10, INFINITE_DF])
    def test_quantile_engine(self, q, df):
        result = equi_quantile(QuantileRequest(level=0.95, R=CorrelationMatrix.identity(q), df=df))
        assert result.value == pytest.approx(_independent_quantile(q, df), abs=0.01)

    def test_bootstrap_enumeration(self):
        rng = np.random.default_rng(99)
        design = build_design(AncovaDataset.from_groups([rng.normal(size=3) * s for s in (1.0, 2.0, 0.5)]))
        fitted = fit(design, VarianceMode.SUBJECT_WISE)
        C = contrast(ContrastKind.TUKEY, 3)
        exact = np.sort(bootstrap_service.exact_distribution(fitted, design, C).sample)
        sampled = bootstrap_service.bootstrap_distribution(
            fitted, design, C, BootstrapSettings(n_boot=20000, seed=8)
        ).sample
        for level in (0.90, 0.95):
            value = bootstrap_service.empirical_quantile(sampled, level)
            se = math.sqrt(level * (1.0 - level) / sampled.size)
            below = np.searchsorted(exact, value - 1e-9, side="left") / exact.size
            at = np.searchsorted(exact, value + 1e-9, side="right") / exact.size
            assert below - 3 * se <= level <= at + 3 * se


@pytest.mark.slow
class TestCompatibility:
    """Equivalências lógicas em conjuntos aleatórios"""

    @pytest.mark.parametrize("kind", [ContrastKind.DUNNETT, ContrastKind.TUKEY, ContrastKind.GRAND_MEAN])
    def test_mvt_methods(self, ancova_factory, kind):
        violations = 0
        for seed in range(1000):
            design = build_design(ancova_factory(seed=seed, sizes=(6, 8, 10, 7), sigmas=[1.0, 2.0, 0.5, 1.5]))
            fitted = fit(design, VarianceMode.GROUP_WISE)
            method = (MethodName.MVT_MIN, MethodName.MVT_MEAN, MethodName.MVT_MAX)[seed % 3]
            result = inference_service.mctp(fitted, design_contrast(design, kind=kind), design, 0.05, method, seed)
            violations += int(not _compatible(result))
        assert violations == 0

    @pytest.mark.parametrize("kind", [ContrastKind.DUNNETT, ContrastKind.TUKEY, ContrastKind.GRAND_MEAN])
    def test_bootstrap(self, ancova_factory, kind):
        violations = 0
        for seed in range(100):
            design = build_design(ancova_factory(seed=seed, sizes=(8, 9, 10)))
            fitted = fit(design, VarianceMode.SUBJECT_WISE)
            result = bootstrap_service.mctp_boot(
                fitted, design, design_contrast(design, kind=kind), settings=BootstrapSettings(n_boot=200, seed=seed)
            )
            violations += int(not _compatible(result))
        assert violations == 0

    def test_bootstrap_close_to_mvt_under_homoscedasticity(self, ancova_factory):
        design = build_design(ancova_factory(seed=3, sizes=(40, 40, 40)))
        C = design_contrast(design)
        boot = bootstrap_service.mctp_boot(
            fit(design, VarianceMode.SUBJECT_WISE), design, C, settings=BootstrapSettings(n_boot=5000, seed=1)
        )
        mvt = inference_service.mctp(fit(design, VarianceMode.HOMOSCEDASTIC), C, design, 0.05, MethodName.MVT_MIN)
        assert boot.crit == pytest.approx(mvt.crit, rel=0.10)


def _compatible(result):
    outside = (result.ci_lower > 0.0) | (result.ci_upper < 0.0)
    return (
        np.array_equal(result.reject, outside)
        and np.array_equal(result.reject, result.p_adj <= result.alpha)
        and result.global_reject == bool(result.reject.any())
    )


def _within(rate, low, high):
    return rate is not None and low <= rate <= high


@pytest.mark.slow
class TestTypeOneError:
    """Nível empírico nos cenários de referência"""

    @pytest.mark.parametrize("method", [MethodName.MVT_MIN, MethodName.MVT_MEAN, MethodName.MVT_MAX])
    def test_balanced_homoscedastic(self, method):
        setting = simulation_service.preset_setting(3, increment=12, n_sim=5000)
        row = simulation_service.type1_study(setting, method, workers=4)
        assert _within(row.rate, 0.040, 0.060)

    def test_groupwise_heteroscedastic(self):
        setting = SimSetting(
            a=3, sizes=[13, 17, 20], variance=VarianceStructure.GROUP_WISE, sigmas=[4.0, 1.5, 1.0],
            contrast=ContrastKind.TUKEY, n_sim=3000,
        )
        row = simulation_service.type1_study(setting, MethodName.MVT_MIN, workers=4)
        assert _within(row.rate, 0.035, 0.065)

    def test_bootstrap_complete_heteroscedasticity(self):
        setting = SimSetting(
            a=3, sizes=[10, 13, 17], variance=VarianceStructure.COMPLETE,
            contrast=ContrastKind.GRAND_MEAN, n_sim=1000, n_boot=1000,
        )
        row = simulation_service.type1_study(setting, MethodName.BOOT, workers=4)
        assert _within(row.rate, 0.032, 0.068)


@pytest.mark.slow
class TestPower:
    """Comportamento qualitativo do poder"""

    def test_homoscedastic_power_rises_faster(self):
        common = dict(a=3, sizes=[8, 8, 8], alternative=Alternative.ALT1, n_sim=2000)
        homoscedastic = simulation_service.power_study(
            SimSetting(variance=VarianceStructure.HOMOSCEDASTIC, **common), MethodName.MVT_MIN, [1.0], workers=4
        )[0]
        complete = simulation_service.power_study(
            SimSetting(variance=VarianceStructure.COMPLETE, **common), MethodName.MVT_MIN, [1.0], workers=4
        )[0]
        assert homoscedastic.rate - complete.rate >= 0.05

    def test_two_sided_shift_beats_one_sided_shift_for_grand_mean(self):
        deltas = [0.5, 1.0, 1.5]
        rates = {}
        for alternative in (Alternative.ALT1, Alternative.ALT2):
            setting = SimSetting(a=3, contrast=ContrastKind.GRAND_MEAN, alternative=alternative, n_sim=2000)
            rates[alternative] = simulation_service.power_study(setting, MethodName.MVT_MIN, deltas, workers=4)
        for alt1, alt2 in zip(rates[Alternative.ALT1], rates[Alternative.ALT2]):
            se = math.sqrt(max(alt1.rate * (1 - alt1.rate), alt2.rate * (1 - alt2.rate)) / alt1.n_valid)
            assert alt2.rate >= alt1.rate - 3 * se

    def test_power_nondecreasing_in_delta(self):
        setting = simulation_service.preset_setting(4, alternative="alt2", n_sim=2000)
        rows = simulation_service.power_study(setting, MethodName.MVT_MEAN, [0.0, 0.5, 1.0, 1.5, 2.0], workers=4)
        for lower, upper in zip(rows, rows[1:]):
            se = math.sqrt(max(lower.rate * (1 - lower.rate), upper.rate * (1 - upper.rate)) / lower.n_valid)
            assert upper.rate >= lower.rate - 3 * se


@pytest.mark.slow
def test_study_is_deterministic_across_workers(tmp_path):
    plan = SimulationPlan(name="determinism", preset=5, setting={"n_sim": 200}, methods=["mvt-min", "mvt-max"])
    simulation_service.run_plan(plan, output_dir=tmp_path / "one", workers=1)
    simulation_service.run_plan(plan, output_dir=tmp_path / "four", workers=4)
    first = (tmp_path / "one" / "results.json").read_bytes()
    assert first == (tmp_path / "four" / "results.json").read_bytes()
    assert json.loads(first)["rows"][0]["n_sim"] == 200
