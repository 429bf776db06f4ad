"""
评价模块 - 用模拟真值给指标打分并汇总蒙特卡罗结果

所有指标都以"越大越差"为方向：与 θ^h / η_r 的正秩相关表示排序正确。
"""

import math
from typing import Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.stats import rankdata

from multilevel_qi.models.dataset import Dataset
from multilevel_qi.models.experiment import (
    MetricRecord,
    ReplicationMetrics,
    ScenarioPoint,
    records_frame,
)
from multilevel_qi.models.fit import FitResult, ModelForm
from multilevel_qi.models.indicators import HOSPITAL_INDICATORS, HospitalIndicators, RegionIndicators
from multilevel_qi.utils.logger import get_logger

logger = get_logger(__name__)

SUMMARY_COLUMNS = ('scenario_param', 'param_value', 'indicator', 'level', 'metric', 'mean', 'sd', 'n_reps', 'n_failed')

# 参与区域级评价的指标（RSHOR 没有对应的真值）
SCORED_REGION_INDICATORS = ('rspor', 'smr_r')

# 系数恢复：(指标名, 模型形式, 系数名, 真值字段)
COEFFICIENT_TARGETS = (
    ('gamma_full', ModelForm.MQI_FULL, 'n_h', 'gamma'),
    ('delta_full', ModelForm.MQI_FULL, 'w', 'delta'),
    ('gamma_noregion', ModelForm.MQI_NOREGION, 'n_h', 'gamma'),
)


def spearman(a: Sequence[float], b: Sequence[float]) -> Optional[float]:
    """Spearman 秩相关：平均秩（并列取中位秩）的 Pearson 相关

    Returns:
        相关系数；任一向量为常数或含缺失值时返回 None
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"向量长度不同: {a.shape[0]} != {b.shape[0]}")
    if a.size < 3:
        raise ValueError(f"至少需要 3 个元素，当前为 {a.size}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        return None
    if np.ptp(a) == 0.0 or np.ptp(b) == 0.0:
        return None

    ra = rankdata(a) - (a.size + 1) / 2.0
    rb = rankdata(b) - (b.size + 1) / 2.0
    r = float(np.sum(ra * rb) / math.sqrt(float(np.sum(ra * ra)) * float(np.sum(rb * rb))))
    return max(-1.0, min(1.0, r))


def tail_size(H: int, tail_share: float = 0.1) -> int:
    """尾部集合大小 k = ⌈tail_share·H⌉"""
    return max(1, int(math.ceil(round(tail_share * H, 9))))


def _tail_set(values: np.ndarray, k: int, tail: str) -> Tuple[np.ndarray, bool]:
    """取最小（best）或最大（worst）的 k 个编号；并列按编号先后，返回边界是否并列"""
    if tail == 'best':
        order = np.argsort(values, kind='stable')
    elif tail == 'worst':
        order = np.argsort(-values, kind='stable')
    else:
        raise ValueError(f"未知的尾部: {tail}（应为 best 或 worst）")
    tied = bool(k < values.size and values[order[k - 1]] == values[order[k]])
    return order[:k], tied


def decile_share(truth: Sequence[float], estimate: Sequence[float], tail: str = 'best',
                 tail_share: float = 0.1, return_tie: bool = False) -> Union[float, Tuple[float, bool]]:
    """真实最好（最差）10% 医院被估计指标识别出的比例

    best 取 θ^h 最小的 k 个，worst 取最大的 k 个；估计集合同理按指标值选取。

    Args:
        return_tie: 为 True 时同时返回估计集合边界是否存在并列

    Returns:
        |真实集合 ∩ 估计集合| / k；估计含缺失值时为 NaN
    """
    truth = np.asarray(truth, dtype=np.float64)
    estimate = np.asarray(estimate, dtype=np.float64)
    if truth.shape != estimate.shape:
        raise ValueError(f"向量长度不同: {truth.shape[0]} != {estimate.shape[0]}")
    if truth.size < 10:
        raise ValueError(f"至少需要 10 个医院，当前为 {truth.size}")

    if not np.all(np.isfinite(estimate)):
        share, tied = float('nan'), False
    else:
        k = tail_size(truth.size, tail_share)
        true_set, _ = _tail_set(truth, k, tail)
        estimated_set, tied = _tail_set(estimate, k, tail)
        share = len(np.intersect1d(true_set, estimated_set)) / k
    return (share, tied) if return_tie else share


def _missing(value: Optional[float]) -> float:
    return float('nan') if value is None else float(value)


def score_replication(dataset: Dataset, hospitals: HospitalIndicators, regions: RegionIndicators,
                      fits: Mapping[ModelForm, FitResult], point: ScenarioPoint,
                      replication: int, tail_share: float = 0.1) -> ReplicationMetrics:
    """给一次重复的全部指标打分"""
    metrics = ReplicationMetrics(
        point=point.index,
        replication=replication,
        failed_fits=[form.value for form in ModelForm if form not in fits or not fits[form].usable],
    )

    def record(indicator: str, level: str, metric: str, value: float):
        metrics.add(MetricRecord(
            point=point.index,
            replication=replication,
            scenario_param=point.label,
            param_value=point.value,
            indicator=indicator,
            level=level,
            metric=metric,
            value=value,
        ))

    theta = hospitals.theta_true
    for name in HOSPITAL_INDICATORS:
        values = hospitals[name]
        record(name, 'hospital', 'spearman', _missing(spearman(theta, values)))
        for tail in ('best', 'worst'):
            if theta.size >= 10:
                share, tied = decile_share(theta, values, tail, tail_share, return_tie=True)
                metrics.decile_ties += int(tied)
            else:
                share = float('nan')
            record(name, 'hospital', f'{tail}_share', share)

    for name in SCORED_REGION_INDICATORS:
        value = spearman(regions.eta_true, regions[name]) if regions.eta_true.size >= 3 else None
        record(name, 'region', 'spearman', _missing(value))

    derived = dataset.derived
    for indicator, form, coefficient, truth_name in COEFFICIENT_TARGETS:
        fit = fits.get(form)
        if fit is None or not fit.usable or derived is None:
            estimate = bias = float('nan')
        else:
            estimate = fit.coefficient(coefficient)
            bias = estimate - getattr(derived, truth_name)
        record(indicator, 'coefficient', 'estimate', estimate)
        record(indicator, 'coefficient', 'bias', bias)

    return metrics


def metric_keys() -> List[Tuple[str, str, str]]:
    """每次重复记录的全部 (指标, 层级, 评价量)，顺序与 score_replication 一致"""
    keys = []
    for name in HOSPITAL_INDICATORS:
        keys.extend((name, 'hospital', metric) for metric in ('spearman', 'best_share', 'worst_share'))
    keys.extend((name, 'region', 'spearman') for name in SCORED_REGION_INDICATORS)
    for indicator, _, _, _ in COEFFICIENT_TARGETS:
        keys.extend((indicator, 'coefficient', metric) for metric in ('estimate', 'bias'))
    return keys


def missing_metrics(point: ScenarioPoint, replication: int) -> ReplicationMetrics:
    """重复本身出错时的全缺失记录，保证失败计数完整"""
    metrics = ReplicationMetrics(point=point.index, replication=replication,
                                 failed_fits=[form.value for form in ModelForm])
    for indicator, level, metric in metric_keys():
        metrics.add(MetricRecord(
            point=point.index,
            replication=replication,
            scenario_param=point.label,
            param_value=point.value,
            indicator=indicator,
            level=level,
            metric=metric,
            value=float('nan'),
        ))
    return metrics


def aggregate(metrics: Iterable[Union[ReplicationMetrics, MetricRecord]]) -> pd.DataFrame:
    """按 (场景点, 指标, 层级, 评价量) 汇总均值、标准差、成功数与失败数

    缺失值（拟合失败或评价量无定义）计入 n_failed；没有成功重复的组均值为空。
    输出只取决于记录集合，与输入顺序无关。
    """
    records: List[MetricRecord] = []
    for item in metrics:
        if isinstance(item, ReplicationMetrics):
            records.extend(item.records)
        else:
            records.append(item)

    frame = records_frame(records)
    if frame.empty:
        return pd.DataFrame(columns=list(SUMMARY_COLUMNS))

    frame['param_value'] = pd.to_numeric(frame['param_value'])
    frame['value'] = pd.to_numeric(frame['value'])
    frame = frame.sort_values(['point', 'replication'], kind='stable')
    keys = ['point', 'scenario_param', 'param_value', 'indicator', 'level', 'metric']
    grouped = frame.groupby(keys, sort=False, dropna=False)['value']
    summary = grouped.agg(
        mean=lambda v: v.mean() if v.notna().any() else np.nan,
        sd=lambda v: v.std(ddof=1) if v.notna().sum() > 1 else np.nan,
        n_reps=lambda v: int(v.notna().sum()),
        n_failed=lambda v: int(v.isna().sum()),
    ).reset_index()
    # 组按 metric_keys 的顺序排列，其余按名称
    rank = {key: i for i, key in enumerate(metric_keys())}
    summary['order'] = [rank.get(key, len(rank)) for key in
                        zip(summary['indicator'], summary['level'], summary['metric'])]
    summary = summary.sort_values(['point', 'order', 'indicator', 'level', 'metric'], kind='stable')

    empty = summary.groupby('point')['n_reps'].sum()
    for point in empty[empty == 0].index:
        logger.warning(f"场景点 {point} 没有任何成功的重复")

    summary['n_reps'] = summary['n_reps'].astype(int)
    summary['n_failed'] = summary['n_failed'].astype(int)
    return summary[list(SUMMARY_COLUMNS)].reset_index(drop=True)
