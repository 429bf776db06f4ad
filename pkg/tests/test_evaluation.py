"""
评价模块测试
"""

import math
import random

import numpy as np
import pandas as pd
import pytest
from scipy.stats import spearmanr

from multilevel_qi.core.dgp import generate_dataset
from multilevel_qi.core.evaluation import (
    SUMMARY_COLUMNS,
    aggregate,
    decile_share,
    metric_keys,
    missing_metrics,
    spearman,
    tail_size,
)
from multilevel_qi.core.harness import simulate_replication
from multilevel_qi.core.indicators import raw_rate, smr
from multilevel_qi.core.scenario import BASELINE
from multilevel_qi.models.experiment import MetricRecord, ScenarioPoint
from multilevel_qi.models.fit import ModelForm
from tests.conftest import TINY_SCENARIO, make_fit


def _record(replication, value, point=0, indicator='shor', metric='spearman', param_value=0.5):
    return MetricRecord(point=point, replication=replication, scenario_param='rho', param_value=param_value,
                        indicator=indicator, level='hospital', metric=metric, value=value)


class TestSpearman:
    """测试秩相关"""

    def setup_method(self):
        self.a = np.array([0.3, -1.2, 2.5, 0.0, 1.1, -0.4, 0.9])

    def test_perfect_agreement(self):
        assert spearman(self.a, self.a) == pytest.approx(1.0)
        assert spearman(self.a, -self.a) == pytest.approx(-1.0)

    def test_midranks(self):
        """并列取平均秩"""
        a = [1.0, 2.0, 2.0, 3.0]
        b = [1.0, 3.0, 2.0, 4.0]
        expected = np.corrcoef([1.0, 2.5, 2.5, 4.0], [1.0, 3.0, 2.0, 4.0])[0, 1]
        assert spearman(a, b) == pytest.approx(expected, abs=1e-12)
        assert spearman(a, b) == pytest.approx(spearmanr(a, b)[0], abs=1e-12)

    def test_monotone_transform_invariance(self):
        b = np.array([1.0, 0.2, 3.0, -0.5, 0.7, 0.1, 2.2])
        assert spearman(self.a, np.exp(b)) == pytest.approx(spearman(self.a, b), abs=1e-12)

    def test_undefined(self):
        assert spearman(self.a, np.ones(7)) is None, "常数向量的秩相关无定义"
        b = self.a.copy()
        b[2] = np.nan
        assert spearman(self.a, b) is None

    def test_invalid_input(self):
        with pytest.raises(ValueError):
            spearman([1.0, 2.0, 3.0], [1.0, 2.0])
        with pytest.raises(ValueError):
            spearman([1.0, 2.0], [2.0, 1.0])


class TestDecileShare:
    """测试十分位识别比例"""

    def setup_method(self):
        self.truth = np.linspace(-1.0, 1.0, 20)

    def test_tail_size(self):
        assert tail_size(200) == 20
        assert tail_size(20) == 2
        assert tail_size(15) == 2
        assert tail_size(10) == 1

    def test_identical_estimate(self):
        assert decile_share(self.truth, self.truth, 'best') == 1.0
        assert decile_share(self.truth, self.truth, 'worst') == 1.0

    def test_reversed_estimate(self):
        assert decile_share(self.truth, -self.truth, 'best') == 0.0
        assert decile_share(self.truth, -self.truth, 'worst') == 0.0

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(5)
        estimate = self.truth + rng.normal(0.0, 0.5, 20)
        for tail in ('best', 'worst'):
            assert decile_share(self.truth, np.exp(estimate), tail) == decile_share(self.truth, estimate, tail)

    def test_partial_overlap(self):
        """k = 20 时一半的真实最好医院被识别"""
        truth = np.arange(200, dtype=float)
        estimate = truth.copy()
        estimate[:10] += 1000.0
        assert decile_share(truth, estimate, 'best') == pytest.approx(0.5)

    def test_ties_reported(self):
        share, tied = decile_share(self.truth, np.zeros(20), 'best', return_tie=True)
        assert tied, "估计集合边界并列时应报告"
        assert share == 1.0, "并列按编号先后取，编号最小的两个恰为真实最好"
        _, tied = decile_share(self.truth, self.truth, 'best', return_tie=True)
        assert not tied

    def test_missing_estimate(self):
        estimate = self.truth.copy()
        estimate[3] = np.nan
        assert math.isnan(decile_share(self.truth, estimate, 'best'))

    def test_invalid_input(self):
        with pytest.raises(ValueError):
            decile_share(np.arange(9.0), np.arange(9.0))
        with pytest.raises(ValueError):
            decile_share(self.truth, self.truth, 'middle')


class TestAggregate:
    """测试蒙特卡罗汇总"""

    def test_single_replication(self):
        summary = aggregate([_record(0, 0.7)])
        assert tuple(summary.columns) == SUMMARY_COLUMNS
        row = summary.iloc[0]
        assert row['mean'] == pytest.approx(0.7)
        assert math.isnan(row['sd'])
        assert (row['n_reps'], row['n_failed']) == (1, 0)

    def test_mean_and_sd(self):
        summary = aggregate([_record(0, 0.4), _record(1, 0.6)])
        row = summary.iloc[0]
        assert row['mean'] == pytest.approx(0.5)
        assert row['sd'] == pytest.approx(math.sqrt(0.02))
        assert row['n_reps'] == 2

    def test_failures_counted(self):
        summary = aggregate([_record(0, 0.4), _record(1, float('nan')), _record(2, 0.6)])
        row = summary.iloc[0]
        assert row['mean'] == pytest.approx(0.5)
        assert (row['n_reps'], row['n_failed']) == (2, 1)

    def test_all_failed(self):
        summary = aggregate([_record(0, float('nan')), _record(1, float('nan'))])
        row = summary.iloc[0]
        assert math.isnan(row['mean'])
        assert (row['n_reps'], row['n_failed']) == (0, 2)

    def test_order_independent(self):
        records = []
        for point, value in enumerate([0.1, 0.5, 0.9]):
            for replication in range(4):
                for indicator in ('shor', 'smr', 'raw'):
                    records.append(_record(replication, value + 0.01 * replication, point=point,
                                           indicator=indicator, param_value=value))
        shuffled = list(records)
        random.Random(3).shuffle(shuffled)
        pd.testing.assert_frame_equal(aggregate(records), aggregate(shuffled))
        assert list(aggregate(records)['indicator'][:3]) == ['raw', 'smr', 'shor'], "组顺序与评价记录顺序一致"

    def test_baseline_point(self):
        record = MetricRecord(point=0, replication=0, scenario_param='baseline', param_value=None,
                              indicator='raw', level='hospital', metric='spearman', value=0.3)
        summary = aggregate([record])
        assert summary.iloc[0]['scenario_param'] == 'baseline'
        assert math.isnan(summary.iloc[0]['param_value'])
        assert summary.iloc[0]['mean'] == pytest.approx(0.3)

    def test_empty(self):
        summary = aggregate([])
        assert summary.empty
        assert tuple(summary.columns) == SUMMARY_COLUMNS


class TestScoring:
    """测试一次重复的打分"""

    def test_record_layout(self):
        point = ScenarioPoint(index=0, scenario=TINY_SCENARIO)
        outcome = simulate_replication(TINY_SCENARIO, seed=8, point=point)
        keys = [(r.indicator, r.level, r.metric) for r in outcome.metrics.records]
        assert keys == metric_keys()
        assert len(keys) == 23

    def test_missing_metrics(self):
        point = ScenarioPoint(index=2, scenario=TINY_SCENARIO, parameter='rho', value=0.5)
        metrics = missing_metrics(point, 4)
        assert len(metrics.records) == len(metric_keys())
        assert all(math.isnan(r.value) for r in metrics.records)
        assert metrics.records[0].scenario_param == 'rho'
        assert len(metrics.failed_fits) == len(ModelForm)

    def test_constant_expected_rate(self):
        """预测概率为常数时 SMR 与原始率的秩相关相同"""
        dataset = generate_dataset(BASELINE, seed=21)
        fit = make_fit(ModelForm.GLM_PATIENT, {'intercept': 0.0, 'x': 0.0},
                       dataset.hospitals.volume, dataset.regions.w)
        theta = dataset.hospitals.theta
        assert spearman(theta, smr(dataset, fit)) == pytest.approx(spearman(theta, raw_rate(dataset)), abs=1e-12)
