"""
绘图模块 - 把汇总表画成矢量图，以及单次重复的典型结果图
"""

import os
from typing import Dict, List, Optional

import matplotlib

matplotlib.use('Agg')

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
from statsmodels.nonparametric.smoothers_lowess import lowess  # noqa: E402

from multilevel_qi.core.evaluation import SUMMARY_COLUMNS  # noqa: E402
from multilevel_qi.utils.logger import get_logger  # noqa: E402

logger = get_logger(__name__)

SERIES_LABELS: Dict[str, str] = {
    'raw': 'raw rate',
    'smr': 'SMR',
    'rsmr': 'RSMR',
    'shor': 'SHOR',
    'shor_noregion': 'SHOR (no region)',
    'rspor': 'RSPOR',
    'smr_r': 'regional SMR',
    'rshor': 'RSHOR',
    'gamma_full': 'gamma (full)',
    'delta_full': 'delta (full)',
    'gamma_noregion': 'gamma (no region)',
}

METRIC_LABELS: Dict[str, str] = {
    'spearman': 'Spearman rank correlation',
    'best_share': 'share of best 10% identified',
    'worst_share': 'share of worst 10% identified',
    'estimate': 'mean estimate',
    'bias': 'mean bias',
}


def plot(summary: pd.DataFrame, out_dir: str, axis: Optional[str] = None) -> List[str]:
    """每个 (层级, 评价量) 一张 SVG：横轴为扫描参数取值，每个指标一条线

    Args:
        summary: harness 输出的汇总表
        out_dir: 输出目录
        axis: 只画该扫描参数的行；None 表示汇总表中的全部行

    Returns:
        写出的文件路径；汇总表为空时为空列表
    """
    missing = [column for column in SUMMARY_COLUMNS if column not in summary.columns]
    if missing:
        raise ValueError(f"汇总表缺少列: {missing}")

    frame = summary if axis is None else summary[summary['scenario_param'] == axis]
    if frame.empty:
        logger.warning(f"汇总表为空（axis={axis}），不生成图形")
        return []

    os.makedirs(out_dir, exist_ok=True)
    label = axis or str(frame['scenario_param'].iloc[0])
    written = []
    for (level, metric), group in frame.groupby(['level', 'metric'], sort=True):
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        for indicator, series in group.groupby('indicator', sort=False):
            x = pd.to_numeric(series['param_value'], errors='coerce').fillna(0.0).to_numpy()
            order = np.argsort(x, kind='stable')
            ax.plot(x[order], series['mean'].to_numpy()[order], marker='o',
                    label=SERIES_LABELS.get(indicator, indicator))
        ax.set_xlabel(label)
        ax.set_ylabel(METRIC_LABELS.get(metric, metric))
        ax.set_title(f'{level} level')
        ax.grid(True, alpha=0.3)
        ax.legend(fontsize='small')
        fig.tight_layout()

        filepath = os.path.join(out_dir, f'{label}_{level}_{metric}.svg')
        fig.savefig(filepath, format='svg')
        plt.close(fig)
        written.append(filepath)
        logger.info(f"图形已写入 {filepath}")
    return written


def plot_replication(dataset, hospitals, filepath: str, frac: float = 2.0 / 3.0) -> str:
    """典型一次重复：真实医院效应、SMR 与 SHOR 随病例量的变化，各带 LOWESS 平滑线"""
    volume = dataset.hospitals.volume.astype(np.float64)
    panels = [
        ('true hospital effect θ', dataset.hospitals.theta),
        ('SMR', hospitals['smr']),
        ('SHOR', hospitals['shor']),
    ]
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.6))
    for ax, (title, values) in zip(axes, panels):
        values = np.asarray(values, dtype=np.float64)
        ok = np.isfinite(values)
        ax.scatter(volume[ok], values[ok], s=10, alpha=0.6)
        if ok.sum() >= 3 and np.ptp(volume[ok]) > 0:
            smooth = lowess(values[ok], volume[ok], frac=frac, return_sorted=True)
            ax.plot(smooth[:, 0], smooth[:, 1], color='black', linewidth=1.5)
        ax.set_xlabel('case volume n^h')
        ax.set_title(title)
        ax.grid(True, alpha=0.3)
    fig.suptitle(f'replication {dataset.seed}: overall outcome rate {float(np.mean(dataset.patients.y)):.3f}')
    fig.tight_layout()

    directory = os.path.dirname(filepath)
    if directory:
        os.makedirs(directory, exist_ok=True)
    fig.savefig(filepath, format='svg')
    plt.close(fig)
    logger.info(f"典型结果图已写入 {filepath}")
    return filepath
