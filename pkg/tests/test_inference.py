"""
Testes do serviço de inferência
"""

import json
from types import SimpleNamespace

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import stats

from src.models.analysis_contract import ContrastKind, DfRule, MethodName, VarianceMode
from src.services import inference_service
from src.services.design_service import AncovaDataset, build_design, contrast, design_contrast, user_contrast
from src.services.errors import DegenerateVariance, ModeMismatch
from src.services.estimation_service import fit
from src.services.mvt_service import INFINITE_DF


def _plug_in(b_hat, Psi, mode=VarianceMode.SUBJECT_WISE):
    """Ajuste mínimo com b e Psi dados (sem delineamento)"""
    return SimpleNamespace(b_hat=np.asarray(b_hat, dtype=float), Psi_hat=np.asarray(Psi, dtype=float), mode=mode)


def _groupwise(responses):
    design = build_design(AncovaDataset.from_groups(responses))
    return design, fit(design, VarianceMode.GROUP_WISE)


def _assert_compatible(result):
    outside = (result.ci_lower > 0.0) | (result.ci_upper < 0.0)
    assert np.array_equal(result.reject, outside)
    assert np.array_equal(result.reject, result.p_adj <= result.alpha)
    assert np.array_equal(result.reject, np.abs(result.statistics) >= result.crit)
    assert result.global_reject == bool(result.reject.any())
    assert result.global_stat == pytest.approx(np.abs(result.statistics).max())
    assert result.global_p == result.p_adj.min()


class TestTestStatistics:
    """Estatísticas T_l"""

    def test_welch_statistic(self, welch_fit):
        effects, se, T = inference_service.test_statistics(welch_fit, user_contrast([[-1.0, 1.0]]))
        assert_allclose(effects, [2.0])
        assert_allclose(se, [np.sqrt(5.0 / 3.0)])
        assert T[0] == pytest.approx(1.5492, abs=1e-4)

    def test_matches_textbook_welch(self, welch_fit):
        first, second = np.array([2.0, 4.0, 6.0]), np.array([1.0, 2.0, 3.0])
        textbook = stats.ttest_ind(first, second, equal_var=False)
        _, _, T = inference_service.test_statistics(welch_fit, contrast(ContrastKind.DUNNETT, 2))
        assert T[0] == pytest.approx(textbook.statistic, abs=1e-10)

    def test_equal_effects_give_zero(self):
        fitted = _plug_in([3.0, 3.0, 3.0], np.eye(3))
        effects, _, T = inference_service.test_statistics(fitted, contrast(ContrastKind.TUKEY, 3))
        assert_allclose(effects, 0.0, atol=1e-15)
        assert_allclose(T, 0.0, atol=1e-15)

    def test_zero_variance_is_degenerate(self):
        _, fitted = _groupwise([[5.0, 5.0, 5.0], [3.0, 3.0, 3.0]])
        with pytest.raises(DegenerateVariance):
            inference_service.test_statistics(fitted, contrast(ContrastKind.DUNNETT, 2))


class TestCorrelation:
    """Matriz de correlação estimada"""

    def test_dunnett_identity_psi(self):
        R = inference_service.correlation(_plug_in(np.zeros(3), np.eye(3)), contrast(ContrastKind.DUNNETT, 3))
        assert_allclose(R.R, [[1.0, 0.5], [0.5, 1.0]], atol=1e-15)

    def test_grand_mean_identity_psi(self):
        R = inference_service.correlation(_plug_in(np.zeros(3), np.eye(3)), contrast(ContrastKind.GRAND_MEAN, 3))
        expected = np.full((3, 3), -0.5)
        np.fill_diagonal(expected, 1.0)
        assert_allclose(R.R, expected, atol=1e-12)

    def test_single_contrast(self, welch_fit):
        R = inference_service.correlation(welch_fit, contrast(ContrastKind.DUNNETT, 2))
        assert_allclose(R.R, [[1.0]])


class TestBoxDfs:
    """Graus de liberdade de Satterthwaite-Box"""

    def test_welch_satterthwaite(self, welch_design, welch_fit):
        nu, notes = inference_service.box_dfs(welch_fit, contrast(ContrastKind.DUNNETT, 2), welch_design)
        assert nu[0] == pytest.approx(50.0 / 17.0, abs=1e-10)
        assert notes == ()

    def test_equal_variances_give_pooled_df(self):
        design, fitted = _groupwise([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
        nu, _ = inference_service.box_dfs(fitted, contrast(ContrastKind.DUNNETT, 2), design)
        assert nu[0] == pytest.approx(4.0, abs=1e-10)

    def test_symmetric_design_gives_equal_dfs(self):
        design, fitted = _groupwise([[1.0, 2.0, 3.0, 5.0], [4.0, 5.0, 6.0, 8.0], [0.0, 1.0, 2.0, 4.0]])
        nu, _ = inference_service.box_dfs(fitted, contrast(ContrastKind.DUNNETT, 3), design)
        assert nu[0] == pytest.approx(nu[1], rel=1e-12)

    def test_needs_groupwise_fit(self, welch_design):
        subject = fit(welch_design, VarianceMode.SUBJECT_WISE)
        with pytest.raises(ModeMismatch):
            inference_service.box_dfs(subject, contrast(ContrastKind.DUNNETT, 2), welch_design)

    def test_scale_invariant(self, ancova_data, ancova_design):
        scaled = build_design(AncovaDataset(
            response=ancova_data.response * 3.0,
            groups=ancova_data.groups,
            covariates=ancova_data.covariates,
        ))
        C = design_contrast(ancova_design)
        base, _ = inference_service.box_dfs(fit(ancova_design), C, ancova_design)
        moved, _ = inference_service.box_dfs(fit(scaled), C, scaled)
        assert_allclose(moved, base, rtol=1e-8)


class TestSelectDf:
    """Regras de seleção dos df"""

    @pytest.mark.parametrize("rule, expected", [(DfRule.MIN, 2.0), (DfRule.MEAN, 3.0), (DfRule.MAX, 3.0)])
    def test_welch_value(self, rule, expected):
        assert inference_service.select_df(np.array([50.0 / 17.0]), rule) == expected

    @pytest.mark.parametrize("rule, expected", [(DfRule.MIN, 10.0), (DfRule.MEAN, 13.0), (DfRule.MAX, 16.0)])
    def test_several_candidates(self, rule, expected):
        assert inference_service.select_df(np.array([10.2, 12.5, 15.1]), rule) == expected

    def test_infinite_candidate(self):
        assert inference_service.select_df(np.array([np.inf, np.inf]), DfRule.MIN) == INFINITE_DF


class TestReconcile:
    """Alinhamento dos p-valores com o valor crítico"""

    def test_moves_p_values_to_the_boundary(self):
        p, reject, moved = inference_service.reconcile(
            np.array([3.0, -1.0, 0.5]), 2.0, np.array([0.06, 0.04, 0.7]), 0.05
        )
        assert reject.tolist() == [True, False, False]
        assert p[0] == 0.05
        assert p[1] == np.nextafter(0.05, 1.0)
        assert p[2] == 0.7
        assert moved == 2

    def test_consistent_input_is_untouched(self):
        p, _, moved = inference_service.reconcile(np.array([3.0, 1.0]), 2.0, np.array([0.01, 0.4]), 0.05)
        assert_allclose(p, [0.01, 0.4])
        assert moved == 0


class TestMctp:
    """Procedimento completo"""

    @pytest.mark.parametrize("method, df", [
        (MethodName.MVT_MIN, 2.0), (MethodName.MVT_MEAN, 3.0), (MethodName.MVT_MAX, 3.0)
    ])
    def test_welch_example(self, welch_design, welch_fit, method, df):
        result = inference_service.mctp(welch_fit, contrast(ContrastKind.DUNNETT, 2), welch_design, method=method)
        assert result.df_used == df
        assert result.statistics[0] == pytest.approx(1.5492, abs=1e-4)
        assert result.crit == pytest.approx(stats.t.ppf(0.975, df), abs=0.02)
        assert not result.global_reject
        _assert_compatible(result)

    def test_mean_rule_critical_value(self, welch_design, welch_fit):
        result = inference_service.mctp(
            welch_fit, contrast(ContrastKind.DUNNETT, 2), welch_design, method=MethodName.MVT_MEAN
        )
        assert result.crit == pytest.approx(3.1824, abs=0.02)

    def test_orthogonal_contrasts_normal(self):
        fitted = _plug_in([0.0, 1.0, 0.0, 2.0], np.eye(4))
        C = user_contrast([[1.0, -1.0, 0.0, 0.0], [0.0, 0.0, 1.0, -1.0]])
        result = inference_service.mctp(fitted, C, design=None, method=MethodName.NORMAL)
        assert result.df_used == INFINITE_DF
        assert result.df_candidates is None
        assert result.crit == pytest.approx(2.2365, abs=0.01)

    def test_normal_reports_box_candidates(self, ancova_design):
        fitted = fit(ancova_design, VarianceMode.GROUP_WISE)
        result = inference_service.mctp(fitted, design_contrast(ancova_design), ancova_design, method=MethodName.NORMAL)
        assert result.df_used == INFINITE_DF
        assert result.df_candidates.shape == (2,)

    def test_homoscedastic_uses_residual_df(self, ancova_design):
        fitted = fit(ancova_design, VarianceMode.HOMOSCEDASTIC)
        result = inference_service.mctp(fitted, design_contrast(ancova_design), ancova_design)
        assert result.df_used == ancova_design.n_obs - 3 - 2
        _assert_compatible(result)

    def test_subjectwise_mvt_is_a_mode_mismatch(self, ancova_design):
        fitted = fit(ancova_design, VarianceMode.SUBJECT_WISE)
        with pytest.raises(ModeMismatch):
            inference_service.mctp(fitted, design_contrast(ancova_design), ancova_design)

    @pytest.mark.parametrize("kind", [ContrastKind.DUNNETT, ContrastKind.TUKEY, ContrastKind.GRAND_MEAN])
    def test_compatibility_under_alternative(self, ancova_factory, kind):
        design = build_design(ancova_factory(seed=21, sizes=(10, 12, 14, 16), effects=[0.0, 0.4, 1.2, 2.0]))
        fitted = fit(design, VarianceMode.GROUP_WISE)
        result = inference_service.mctp(fitted, design_contrast(design, kind=kind), design)
        _assert_compatible(result)
        assert result.global_reject

    def test_equal_means_cover_zero(self):
        design, fitted = _groupwise([[1.0, 2.0, 3.0], [0.0, 2.0, 4.0], [1.5, 2.0, 2.5]])
        result = inference_service.mctp(fitted, contrast(ContrastKind.TUKEY, 3), design)
        assert np.all(result.ci_lower < 0.0) and np.all(result.ci_upper > 0.0)
        assert 0.0 <= result.global_p <= 1.0
        assert not result.global_reject

    def test_location_invariance(self, ancova_data, ancova_design):
        shifted = build_design(AncovaDataset(
            response=ancova_data.response + 10.0,
            groups=ancova_data.groups,
            covariates=ancova_data.covariates,
        ))
        C = design_contrast(ancova_design, kind=ContrastKind.TUKEY)
        base = inference_service.mctp(fit(ancova_design), C, ancova_design)
        moved = inference_service.mctp(fit(shifted), C, shifted)
        assert_allclose(moved.statistics, base.statistics, atol=1e-10)
        assert_allclose(moved.p_adj, base.p_adj, atol=1e-10)
        assert_allclose(moved.ci_lower, base.ci_lower, atol=1e-10)
        assert moved.df_used == base.df_used

    def test_scale_equivariance(self, ancova_data, ancova_design):
        scaled = build_design(AncovaDataset(
            response=ancova_data.response * 2.0,
            groups=ancova_data.groups,
            covariates=ancova_data.covariates,
        ))
        C = design_contrast(ancova_design)
        base = inference_service.mctp(fit(ancova_design), C, ancova_design)
        moved = inference_service.mctp(fit(scaled), C, scaled)
        assert_allclose(moved.statistics, base.statistics, rtol=1e-8)
        assert_allclose(moved.p_adj, base.p_adj, atol=1e-8)
        assert_allclose(moved.effects, 2.0 * base.effects, rtol=1e-8)
        assert_allclose(moved.ci_upper, 2.0 * base.ci_upper, rtol=1e-8)

    def test_rule_monotonicity(self, ancova_factory):
        design = build_design(ancova_factory(seed=2, sizes=(6, 9, 15), sigmas=[0.5, 1.0, 3.0]))
        fitted = fit(design, VarianceMode.GROUP_WISE)
        C = design_contrast(design, kind=ContrastKind.TUKEY)
        crits = [inference_service.mctp(fitted, C, design, method=m).crit
                 for m in (MethodName.MVT_MIN, MethodName.MVT_MEAN, MethodName.MVT_MAX)]
        assert crits[0] >= crits[1] - 0.01
        assert crits[1] >= crits[2] - 0.01

    def test_one_sided_upper_bound_is_infinite(self, welch_design, welch_fit):
        result = inference_service.mctp(
            welch_fit, contrast(ContrastKind.DUNNETT, 2), welch_design, method=MethodName.MVT_MEAN, one_sided=True
        )
        assert result.crit == pytest.approx(stats.t.ppf(0.95, 3), abs=0.02)
        assert np.isinf(result.ci_upper[0])

    def test_invalid_alpha(self, welch_design, welch_fit):
        with pytest.raises(ValueError):
            inference_service.mctp(welch_fit, contrast(ContrastKind.DUNNETT, 2), welch_design, alpha=1.0)

    def test_report_serializes(self, ancova_design):
        fitted = fit(ancova_design)
        result = inference_service.mctp(fitted, design_contrast(ancova_design), ancova_design)
        report = result.to_report(ancova_design, fitted)
        payload = json.loads(report.model_dump_json())
        assert payload["method"] == "mvt-min"
        assert [row["label"] for row in payload["contrasts"]] == ["2 - 1", "3 - 1"]
        assert [row["name"] for row in payload["covariates"]] == ["x1", "x2"]
        assert payload["diagnostics"]["reconciled_p_values"] >= 0


class TestGlobalTest:
    """Decisão global isolada"""

    def test_agrees_with_full_procedure(self, ancova_factory):
        design = build_design(ancova_factory(seed=8, effects=[0.0, 1.5, 3.0]))
        fitted = fit(design)
        C = design_contrast(design)
        t0, p_global, reject = inference_service.global_test(fitted, C, design)
        full = inference_service.mctp(fitted, C, design)
        assert t0 == pytest.approx(full.global_stat)
        assert p_global == pytest.approx(full.global_p, abs=1e-3)
        assert reject == full.global_reject
