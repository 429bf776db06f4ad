"""
估计核心测试
"""

import math

import numpy as np
import pytest
import statsmodels.api as sm
from scipy.special import expit, logit

from multilevel_qi.core.dgp import generate_dataset
from multilevel_qi.core.glmm import (
    LaplaceObjective,
    PredictionError,
    design_matrix,
    fit_glm,
    fit_glmm,
    fit_model,
    predict_probability,
)
from multilevel_qi.core.quadrature import marginal_loglik_agq
from multilevel_qi.core.scenario import BASELINE, derive_parameters
from multilevel_qi.models.dataset import Dataset
from multilevel_qi.models.fit import FitOptions, FitStatus, ModelForm
from tests.conftest import make_fit

OPTIONS = FitOptions()


def _unequal_dataset(seed: int = 3) -> Dataset:
    """3 个区域、7 个医院、病例量不等，w = [0, 1, 1]"""
    rng = np.random.default_rng(seed)
    sizes = [3, 5, 4, 6, 2, 7, 3]
    hospital_region = [0, 0, 1, 1, 1, 2, 2]
    hospital = np.repeat(np.arange(len(sizes)), sizes)
    x = rng.normal(0.0, 1.0, hospital.size)
    y = (rng.random(hospital.size) < expit(-0.4 + 0.8 * x)).astype(int)
    y[:2] = [0, 1]
    return Dataset.from_arrays(x=x, y=y, hospital=hospital, hospital_region=hospital_region, w=[0, 1, 1])


class TestGLM:
    """测试逻辑回归"""

    def setup_method(self):
        rng = np.random.default_rng(42)
        self.hospital = np.arange(50) // 5
        self.x = rng.normal(0.0, 1.0, 50)
        self.y = (rng.random(50) < expit(-0.5 + 1.0 * self.x)).astype(int)
        self.dataset = Dataset.from_arrays(x=self.x, y=self.y, hospital=self.hospital,
                                           hospital_region=[0] * 5 + [1] * 5, w=[0, 1])

    def test_matches_reference_logit(self):
        """与 statsmodels 的最大似然解一致"""
        fit = fit_glm(self.dataset, options=OPTIONS)
        reference = sm.Logit(self.y, sm.add_constant(self.x)).fit(disp=0, tol=1e-12)
        assert fit.status == FitStatus.CONVERGED
        assert fit.coefficient('intercept') == pytest.approx(reference.params[0], abs=1e-6)
        assert fit.coefficient('x') == pytest.approx(reference.params[1], abs=1e-6)
        assert fit.loglik == pytest.approx(reference.llf, abs=1e-8)

    def test_loglik_trace_non_decreasing(self):
        fit = fit_glm(self.dataset, options=OPTIONS)
        assert all(b >= a - 1e-9 for a, b in zip(fit.trace, fit.trace[1:])), "对数似然轨迹不应下降"

    def test_constant_covariate_dropped(self):
        """x 为常数时去掉该列，截距为 logit(结局均值)"""
        y = np.array([0, 1, 1, 0, 0, 0, 1, 0, 0, 0])
        dataset = Dataset.from_arrays(x=np.full(10, 0.3), y=y, hospital=np.arange(10) // 5,
                                      hospital_region=[0, 1], w=[0, 1])
        fit = fit_glm(dataset, options=OPTIONS)
        assert fit.dropped == ('x',)
        assert fit.coefficient('x') == 0.0
        assert fit.coefficient('intercept') == pytest.approx(logit(0.3), abs=1e-8)

    def test_single_outcome_is_separation(self):
        y = np.zeros(50, dtype=int)
        dataset = Dataset.from_arrays(x=self.x, y=y, hospital=self.hospital,
                                      hospital_region=[0] * 5 + [1] * 5, w=[0, 1])
        assert fit_glm(dataset, options=OPTIONS).status == FitStatus.SEPARATION
        fit = fit_glmm(dataset, ModelForm.RI_HOSPITAL, OPTIONS)
        assert fit.status == FitStatus.SEPARATION
        assert not fit.usable

    def test_design_matrix_columns(self):
        dataset = _unequal_dataset()
        X, names, dropped = design_matrix(dataset, ModelForm.MQI_FULL)
        assert names == ['intercept', 'x', 'n_h', 'w']
        assert dropped == ()
        np.testing.assert_array_equal(X[:, 2], dataset.hospitals.volume[dataset.patients.hospital])

    def test_fit_model_dispatch(self):
        fit = fit_model(self.dataset, ModelForm.GLM_PATIENT, OPTIONS)
        assert fit.form == ModelForm.GLM_PATIENT
        assert fit.variance_components == {}
        with pytest.raises(ValueError):
            fit_glmm(self.dataset, ModelForm.GLM_PATIENT, OPTIONS)


class TestPrediction:
    """测试预测概率"""

    def test_glm(self):
        fit = make_fit(ModelForm.GLM_PATIENT, {'intercept': 0.0, 'x': 1.0}, [2, 3], [0, 1])
        assert predict_probability(fit, 0.0) == pytest.approx(0.5)
        assert predict_probability(fit, 1.0) == pytest.approx(expit(1.0))
        values = predict_probability(fit, [0.0, 1.0])
        np.testing.assert_allclose(values, [0.5, expit(1.0)])

    def test_hospital_intercept(self):
        fit = make_fit(ModelForm.RI_HOSPITAL, {'intercept': 0.0, 'x': 1.0}, [2, 3], [0, 1],
                       hospital_effects=[0.5, -0.5])
        assert predict_probability(fit, 0.0, hospital=0) == pytest.approx(expit(0.5))
        np.testing.assert_allclose(fit.hospital_intercepts(), [0.5, -0.5])

    def test_full_model_terms(self):
        fit = make_fit(ModelForm.MQI_FULL, {'intercept': -1.0, 'x': 1.0, 'n_h': -0.1, 'w': 0.4},
                       [2, 3], [0, 1], hospital_effects=[0.2, -0.1], region_effects=[0.05, -0.05])
        expected = expit(-1.0 + 0.5 + (-0.1 * 3 - 0.1) + (0.4 * 1 - 0.05))
        assert predict_probability(fit, 0.5, hospital=1, region=1) == pytest.approx(expected, abs=1e-12)

    def test_unknown_hospital(self):
        fit = make_fit(ModelForm.RI_HOSPITAL, {'intercept': 0.0, 'x': 1.0}, [2, 3], [0, 1])
        with pytest.raises(PredictionError):
            predict_probability(fit, 0.0, hospital=5)

    def test_missing_effect(self):
        fit = make_fit(ModelForm.GLM_PATIENT, {'intercept': 0.0, 'x': 1.0}, [2, 3], [0, 1])
        with pytest.raises(PredictionError):
            predict_probability(fit, 0.0, hospital=0)
        with pytest.raises(PredictionError):
            predict_probability(fit, 0.0, region=0)


class TestLaplaceObjective:
    """测试拉普拉斯目标函数"""

    def test_gradient_matches_finite_differences(self):
        """解析梯度与中心差分一致"""
        objective = LaplaceObjective(_unequal_dataset(), ModelForm.MQI_FULL, options=OPTIONS)
        params = np.array([-0.3, 0.5, -0.05, 0.2, math.log(0.3), math.log(0.2)])
        _, grad = objective.value_and_grad(params)

        step = 1e-5
        numeric = np.empty_like(params)
        for j in range(params.size):
            e = np.zeros_like(params)
            e[j] = step
            numeric[j] = (objective.value(params + e) - objective.value(params - e)) / (2.0 * step)
        np.testing.assert_allclose(grad, numeric, rtol=1e-4, atol=1e-6)

    @pytest.mark.parametrize('form', [ModelForm.MQI_FULL, ModelForm.MQI_NOREGION, ModelForm.RI_HOSPITAL])
    @pytest.mark.parametrize('seed', range(5))
    def test_gradient_on_random_instances(self, seed, form):
        """随机小算例与随机参数点上，解析梯度与中心差分（步长 1e-5）一致"""
        rng = np.random.default_rng(500 + seed)
        sizes = rng.integers(1, 7, size=7)
        sizes[:2] = [1, 6]
        hospital = np.repeat(np.arange(7), sizes)
        x = rng.normal(0.0, 1.0, hospital.size)
        y = (rng.random(hospital.size) < 0.4).astype(int)
        y[:2] = [0, 1]
        dataset = Dataset.from_arrays(x=x, y=y, hospital=hospital, hospital_region=[0, 0, 1, 1, 1, 2, 2],
                                      w=[0, 1, 1])
        objective = LaplaceObjective(dataset, form, options=OPTIONS)
        beta = rng.uniform(-0.5, 0.5, len(objective.names))
        log_variances = np.log(rng.uniform(0.1, 0.6, objective.n_params - len(objective.names)))
        params = np.concatenate([beta, log_variances])
        _, grad = objective.value_and_grad(params)

        step = 1e-5
        numeric = np.empty_like(params)
        for j in range(params.size):
            e = np.zeros_like(params)
            e[j] = step
            numeric[j] = (objective.value(params + e) - objective.value(params - e)) / (2.0 * step)
        np.testing.assert_allclose(grad, numeric, rtol=1e-4, atol=1e-6)

    def test_standardized_scale_round_trip(self):
        objective = LaplaceObjective(_unequal_dataset(), ModelForm.MQI_FULL, options=OPTIONS, standardize=True)
        beta = np.array([-0.3, 0.5, -0.05, 0.2])
        np.testing.assert_allclose(objective.to_original_scale(objective.to_standardized_scale(beta)), beta)

    def test_rejects_non_nested(self):
        dataset = _unequal_dataset()
        moved = np.array(dataset.patients.region)
        moved[0] = 2
        crossed = Dataset.from_arrays(x=dataset.patients.x, y=dataset.patients.y,
                                      hospital=dataset.patients.hospital,
                                      hospital_region=dataset.hospitals.region, w=[0, 1, 1],
                                      patient_region=moved)
        with pytest.raises(ValueError):
            LaplaceObjective(crossed, ModelForm.MQI_FULL, options=OPTIONS)

    @pytest.mark.parametrize('instance', range(20))
    def test_agrees_with_adaptive_quadrature(self, instance):
        """2 区域 × 2 医院 × 5 患者的小算例上与自适应 Gauss-Hermite 积分相差 < 1e-3（相对）"""
        rng = np.random.default_rng(1000 + instance)
        hospital = np.repeat(np.arange(4), 5)
        x = rng.normal(0.0, 1.0, 20)
        y = (rng.random(20) < 0.35).astype(int)
        dataset = Dataset.from_arrays(x=x, y=y, hospital=hospital, hospital_region=[0, 0, 1, 1], w=[0, 1])

        intercept = rng.uniform(-0.5, 0.5)
        slope = rng.uniform(-0.5, 0.5)
        w_coef = rng.uniform(-0.5, 0.5)
        sigma_u2, sigma_v2 = rng.uniform(0.05, 0.12, 2)

        objective = LaplaceObjective(dataset, ModelForm.MQI_FULL, options=OPTIONS)
        assert objective.names == ['intercept', 'x', 'w']
        laplace = objective.value(np.array([intercept, slope, w_coef, math.log(sigma_u2), math.log(sigma_v2)]))
        exact = marginal_loglik_agq(dataset, ModelForm.MQI_FULL, {'intercept': intercept, 'x': slope, 'w': w_coef},
                                    {'hospital': sigma_u2, 'region': sigma_v2}, nodes=20)
        assert abs(laplace - exact) / abs(exact) < 1e-3


class TestGLMM:
    """测试随机效应模型拟合"""

    def test_identical_hospitals_give_boundary(self):
        """各医院数据完全相同（欠离散）时医院方差位于边界 0"""
        x = np.tile([-1.0, -0.5, 0.0, 0.5, 1.0], 10)
        y = np.tile([0, 1, 0, 0, 1], 10)
        dataset = Dataset.from_arrays(x=x, y=y, hospital=np.arange(50) // 5,
                                      hospital_region=[0] * 5 + [1] * 5, w=[0, 1])
        fit = fit_glmm(dataset, ModelForm.RI_HOSPITAL, OPTIONS)
        glm = fit_glm(dataset, ModelForm.RI_HOSPITAL, OPTIONS)
        assert fit.status == FitStatus.BOUNDARY
        assert fit.usable
        assert fit.variance_components['hospital'] == 0.0
        np.testing.assert_array_equal(fit.hospital_effects, np.zeros(10))
        assert fit.coefficient('intercept') == pytest.approx(glm.coefficient('intercept'), abs=1e-3)
        assert fit.coefficient('x') == pytest.approx(glm.coefficient('x'), abs=1e-3)

    def test_shrinkage_on_simulated_data(self):
        """经验贝叶斯众数向 0 收缩：众数的离散程度不超过估计方差"""
        dataset = generate_dataset(BASELINE, seed=11)
        fit = fit_glmm(dataset, ModelForm.RI_HOSPITAL, OPTIONS)
        assert fit.usable
        assert fit.hospital_effects.shape == (dataset.H,)
        assert np.var(fit.hospital_effects) <= fit.variance_components['hospital']
        assert abs(float(np.mean(fit.hospital_effects))) < 0.1

    @pytest.mark.parametrize('seed', [11, 12, 13])
    def test_single_patient_hospitals_shrink_most(self, seed):
        """n^h = 1 的医院偏离 â̄ 的幅度不超过 n^h ≥ 10 的医院中的最大偏离"""
        dataset = generate_dataset(BASELINE, seed=seed)
        fit = fit_glmm(dataset, ModelForm.RI_HOSPITAL, OPTIONS)
        assert fit.usable
        volume = dataset.hospitals.volume
        deviation = np.abs(fit.hospital_effects)
        assert np.any(volume == 1) and np.any(volume >= 10), "算例中需要两类医院"
        largest_single = float(deviation[volume == 1].max())
        largest_large = float(deviation[volume >= 10].max())
        assert largest_single <= largest_large, f"单患者医院偏离 {largest_single} 超过大医院最大偏离 {largest_large}"

    def test_full_model_on_simulated_data(self):
        dataset = generate_dataset(BASELINE, seed=11)
        fit = fit_glmm(dataset, ModelForm.MQI_FULL, OPTIONS)
        assert fit.usable
        assert set(fit.fixed_effects) == {'intercept', 'x', 'n_h', 'w'}
        assert set(fit.variance_components) == {'hospital', 'region'}
        assert fit.region_effects.shape == (dataset.R,)
        assert np.isfinite(fit.loglik)

    def test_deterministic(self):
        dataset = generate_dataset(BASELINE, seed=12)
        first = fit_glmm(dataset, ModelForm.MQI_NOREGION, OPTIONS)
        second = fit_glmm(dataset, ModelForm.MQI_NOREGION, OPTIONS)
        assert first.fixed_effects == second.fixed_effects
        np.testing.assert_array_equal(first.hospital_effects, second.hospital_effects)


@pytest.mark.slow
class TestConsistency:
    """大病例量下病例量系数的恢复"""

    def test_volume_coefficient(self):
        scenario = BASELINE.with_value('n_bar', 200)
        dataset = generate_dataset(scenario, seed=7)
        fit = fit_glmm(dataset, ModelForm.MQI_FULL, OPTIONS)
        assert fit.usable
        assert fit.coefficient('n_h') == pytest.approx(derive_parameters(scenario).gamma, abs=1e-3)
