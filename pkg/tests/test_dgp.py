"""
数据生成过程测试
"""

import numpy as np
import pandas as pd
import pytest

from multilevel_qi.core.dgp import (
    dump_datasets,
    generate_dataset,
    generate_hospitals,
    generate_regions,
)
from multilevel_qi.core.scenario import BASELINE, ScenarioError, derive_parameters
from multilevel_qi.core.streams import format_stream_key, replication_rng, stream_key
from multilevel_qi.models.dataset import DUMP_COLUMNS


class TestStreams:
    """测试随机数流"""

    def test_same_key_same_stream(self):
        a = replication_rng(1, 2, 3).random(5)
        b = replication_rng(1, 2, 3).random(5)
        np.testing.assert_array_equal(a, b)

    def test_keys_independent(self):
        a = replication_rng(1, 0, 0).random(5)
        b = replication_rng(1, 0, 1).random(5)
        c = replication_rng(1, 1, 0).random(5)
        assert not np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_format(self):
        assert format_stream_key(stream_key(7, 1, 2)) == '7:1:2'


class TestGenerateDataset:
    """测试单个数据集的结构"""

    def setup_method(self):
        self.dataset = generate_dataset(BASELINE, seed=123)
        self.derived = derive_parameters(BASELINE)

    def test_sizes(self):
        d = self.dataset
        assert d.R == 20
        assert d.H == 200
        assert d.n == int(d.hospitals.volume.sum())
        assert d.check_nesting(), "患者必须嵌套在医院与区域中"

    def test_volume_range(self):
        volume = self.dataset.hospitals.volume
        assert volume.min() >= 1
        assert volume.max() <= 19

    def test_truths(self):
        """θ^h = γ·n^h + u^h，η_r = δ·w_r + v_r"""
        h = self.dataset.hospitals
        r = self.dataset.regions
        np.testing.assert_allclose(h.theta, self.derived.gamma * h.volume + h.u, atol=1e-12)
        np.testing.assert_allclose(r.eta, self.derived.delta * r.w + r.v, atol=1e-12)

    def test_outcome_probability(self):
        d = self.dataset
        p = d.patients
        expected = 1.0 / (1.0 + np.exp(-(self.derived.alpha + p.x + d.hospitals.theta[p.hospital]
                                         + d.regions.eta[p.region])))
        np.testing.assert_allclose(p.p_y, expected, rtol=1e-12)
        assert set(np.unique(p.y)) <= {0, 1}

    def test_deterministic(self):
        again = generate_dataset(BASELINE, seed=123)
        np.testing.assert_array_equal(again.patients.x, self.dataset.patients.x)
        np.testing.assert_array_equal(again.patients.y, self.dataset.patients.y)
        assert again.seed == self.dataset.seed == '123:0:0'

    def test_replications_differ(self):
        other = generate_dataset(BASELINE, seed=123, replication=1)
        assert not np.array_equal(other.hospitals.u, self.dataset.hospitals.u)

    def test_arrays_read_only(self):
        with pytest.raises(ValueError):
            self.dataset.patients.x[0] = 1.0

    def test_records(self):
        first = next(self.dataset.patients.records())
        assert first.hospital == 0
        assert first.index == 0
        hospital = self.dataset.hospitals[0]
        assert hospital.volume == int(self.dataset.hospitals.volume[0])

    def test_within_hospital_index_built_once(self):
        """院内序号在构造时算好，逐条访问与整体结果一致"""
        patients = self.dataset.patients
        index = patients.within_hospital_index()
        assert patients.within_hospital_index() is index, "院内序号应只计算一次"
        assert not index.flags.writeable
        last = int(self.dataset.hospitals.volume[0]) - 1
        assert patients[last].index == last
        assert patients[last + 1].index == 0, "下一个医院的序号从 0 开始"
        assert [p.index for p in patients.records()] == index.tolist()

    def test_invalid_scenario(self):
        with pytest.raises(ScenarioError):
            generate_dataset(BASELINE.with_value('rho', 2.0), seed=1)

    def test_dump(self, tmp_path):
        path = dump_datasets([self.dataset], str(tmp_path / 'data.csv'))
        frame = pd.read_csv(path)
        assert tuple(frame.columns) == DUMP_COLUMNS
        assert len(frame) == self.dataset.n


class TestMoments:
    """测试医院层面的矩"""

    def _hospitals(self, scenario, seed=2024):
        d = derive_parameters(scenario)
        rng = replication_rng(seed)
        regions = generate_regions(scenario, d, rng)
        return d, generate_hospitals(scenario, d, regions, rng)

    def test_volume_variance(self):
        """10^5 个医院的 V[n^h] 与 σ_n² 相差不超过 2%"""
        scenario = BASELINE.with_value('R', 10000)
        d, hospitals = self._hospitals(scenario)
        assert len(hospitals) == 100000
        assert abs(hospitals.volume.var() / d.sigma_n2 - 1.0) < 0.02

    def test_volume_variance_unequal_regions(self):
        scenario = BASELINE.with_value('R', 10000).with_value('delta_n', 16)
        d, hospitals = self._hospitals(scenario)
        assert abs(hospitals.volume.var() / d.sigma_n2 - 1.0) < 0.02

    @pytest.mark.parametrize('xi', [0.1, 0.5, 0.9])
    def test_explained_share(self, xi):
        """V[γ·n^h] / V[θ^h] 与 ξ 相差不超过 0.02"""
        scenario = BASELINE.with_value('R', 10000).with_value('xi_n_theta', xi)
        d, hospitals = self._hospitals(scenario)
        share = np.var(d.gamma * hospitals.volume) / np.var(hospitals.theta)
        assert abs(share - xi) < 0.02

    @pytest.mark.parametrize('delta_n', [0, 16])
    def test_size_biased_expectations(self, delta_n):
        """按 n^h 展开为患者行后，n^h 的均值接近 En_patient，w_r=1 的频率接近 ζ（均在 1% 内）"""
        scenario = BASELINE.with_value('R', 100000).with_value('delta_n', delta_n)
        d = derive_parameters(scenario)
        rng = replication_rng(2024)
        regions = generate_regions(scenario, d, rng)
        hospitals = generate_hospitals(scenario, d, regions, rng)
        volume = hospitals.volume.astype(np.float64)
        patient_mean = float(np.sum(volume ** 2) / np.sum(volume))
        w_share = float(np.sum(volume * regions.w[hospitals.region]) / np.sum(volume))
        assert abs(patient_mean / d.En_patient - 1.0) < 0.01, f"患者层面病例量均值 {patient_mean} 偏离 {d.En_patient}"
        assert abs(w_share / d.zeta - 1.0) < 0.01, f"患者层面 w_r=1 频率 {w_share} 偏离 {d.zeta}"

    @pytest.mark.parametrize('rho', [-0.8, 0.8])
    def test_sampled_case_mix_correlation(self, rho):
        """10^5 个医院上 (μ_x^h, n^h) 的样本相关与 ρ 相差不超过 0.02"""
        scenario = BASELINE.with_value('R', 10000).with_value('rho', rho)
        _, hospitals = self._hospitals(scenario)
        corr = float(np.corrcoef(hospitals.mu_x, hospitals.volume)[0, 1])
        assert abs(corr - rho) < 0.02, f"样本相关 {corr} 偏离 {rho}"


class TestRegionMoments:
    """测试区域层面的矩"""

    def _regions(self, scenario, seed=2024):
        d = derive_parameters(scenario)
        return d, generate_regions(scenario, d, replication_rng(seed))

    def test_baseline_moments(self):
        """10^5 个区域：η_r 均值接近 δ·0.5，方差与 σ_η² 相差不超过 2%"""
        scenario = BASELINE.with_value('R', 100000)
        d, regions = self._regions(scenario)
        assert len(regions) == 100000
        assert abs(d.delta * 0.5 - 0.35355) < 1e-5
        assert abs(float(regions.eta.mean()) - 0.35355) < 0.01
        assert abs(float(regions.eta.var()) / 0.25 - 1.0) < 0.02

    def test_explained_share_near_one(self):
        """ξ_w^η = 0.99 时 V[δ·w_r] / V[η_r] ≈ 0.99"""
        scenario = BASELINE.with_value('R', 100000).with_value('xi_w_eta', 0.99)
        d, regions = self._regions(scenario)
        share = np.var(d.delta * regions.w) / np.var(regions.eta)
        assert abs(share - 0.99) < 0.01

    def test_no_region_variance(self):
        """σ_η = 0 时所有 η_r 为 0"""
        d, regions = self._regions(BASELINE.with_value('sigma_eta', 0.0))
        assert np.all(regions.eta == 0.0)


class TestSampleSize:
    """测试期望样本量"""

    def test_expected_patient_count(self):
        """基线 1000 次重复的平均患者总数与 2000 相差不超过 2%"""
        d = derive_parameters(BASELINE)
        totals = [generate_dataset(BASELINE, seed=31, replication=rep, derived=d).n for rep in range(1000)]
        assert abs(np.mean(totals) / 2000.0 - 1.0) < 0.02


@pytest.mark.slow
class TestOutcomeCalibration:
    """测试基线平均结局概率"""

    def test_pooled_mean(self):
        """合并的结局均值接近大样本数值真值，并在目标值 0.3 的 ±0.05 内"""
        oracle = float(generate_dataset(BASELINE.with_value('R', 40000), seed=99).patients.p_y.mean())
        sample = generate_dataset(BASELINE.with_value('R', 2000), seed=5)
        assert abs(float(sample.patients.y.mean()) - oracle) < 0.01
        assert abs(oracle - BASELINE.p_y_bar) < 0.05
