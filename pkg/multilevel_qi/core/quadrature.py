"""
自适应 Gauss-Hermite 求积 - 随机截距逻辑模型的边际对数似然

与拉普拉斯近似无共享代码的独立实现，用于核对 glmm 的目标函数。
区域效应在外层积分，医院效应在内层积分；每一层都以条件众数为中心、
以该处曲率为尺度放置节点。
"""

import math
from typing import Dict, Mapping, Optional, Sequence

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import expit, roots_hermite

from multilevel_qi.core.glmm import design_matrix
from multilevel_qi.models.dataset import Dataset
from multilevel_qi.models.fit import ModelForm


def _loglik(eta: np.ndarray, y: np.ndarray) -> float:
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def _logsumexp(values: np.ndarray) -> float:
    peak = float(np.max(values))
    return peak + math.log(float(np.sum(np.exp(values - peak))))


class _GaussHermite:
    """以 (中心, 尺度) 自适应放置节点的一维积分 log ∫ exp(f(t)) dt"""

    def __init__(self, nodes: int):
        self.z, weights = roots_hermite(nodes)
        self.log_weights = np.log(weights) + self.z ** 2

    def log_integral(self, log_f, center: float, scale: float) -> float:
        points = center + math.sqrt(2.0) * scale * self.z
        values = np.array([log_f(t) for t in points])
        return math.log(math.sqrt(2.0) * scale) + _logsumexp(self.log_weights + values)


def _hospital_mode(offset: np.ndarray, y: np.ndarray, variance: float,
                   max_iterations: int = 100, tolerance: float = 1e-12):
    """医院效应的条件众数与该处负二阶导"""
    u = 0.0
    for _ in range(max_iterations):
        p = expit(offset + u)
        gradient = float(np.sum(y - p)) - u / variance
        curvature = float(np.sum(p * (1.0 - p))) + 1.0 / variance
        step = gradient / curvature
        u += step
        if abs(step) < tolerance:
            break
    p = expit(offset + u)
    return u, float(np.sum(p * (1.0 - p))) + 1.0 / variance


def _log_hospital_integral(offset: np.ndarray, y: np.ndarray, variance: float, rule: _GaussHermite) -> float:
    """log ∫ Π_i p(y_i | offset_i + u) φ(u; σ_u²) du"""
    mode, curvature = _hospital_mode(offset, y, variance)

    def log_f(u):
        return _loglik(offset + u, y) - 0.5 * u * u / variance

    return rule.log_integral(log_f, mode, 1.0 / math.sqrt(curvature)) - 0.5 * math.log(2.0 * math.pi * variance)


def marginal_loglik_agq(dataset: Dataset, form, fixed: Mapping[str, float],
                        variances: Mapping[str, float], nodes: int = 15,
                        components: Optional[Sequence[str]] = None) -> float:
    """边际对数似然的自适应 Gauss-Hermite 近似

    Args:
        dataset: 数据集（医院须嵌套在区域内）
        form: 模型形式，决定固定效应列
        fixed: 固定效应系数，键为 'intercept', 'x', 'n_h', 'w'
        variances: 方差分量，键为 'hospital', 'region'
        nodes: 每个随机效应的求积节点数
        components: 参与积分的随机效应分量，默认取模型形式的全部分量

    Returns:
        边际对数似然
    """
    form = ModelForm(form)
    components = tuple(form.random_effects if components is None else components)
    X, names, _ = design_matrix(dataset, form)
    beta = np.array([fixed.get(name, 0.0) for name in names])
    offset = X @ beta
    y = dataset.patients.y.astype(np.float64)
    hosp = dataset.patients.hospital
    rule = _GaussHermite(nodes)

    use_u = 'hospital' in components
    use_v = 'region' in components
    sigma_u2 = float(variances.get('hospital', 0.0))
    sigma_v2 = float(variances.get('region', 0.0))

    patients_of: Dict[int, np.ndarray] = {h: np.flatnonzero(hosp == h) for h in range(dataset.H)}

    def log_region_conditional(r: int, v: float) -> float:
        """给定 v_r 时区域 r 内所有患者的对数（边际于 u）似然"""
        total = 0.0
        for h in np.flatnonzero(dataset.hospitals.region == r):
            rows = patients_of[int(h)]
            if rows.size == 0:
                continue
            if use_u:
                total += _log_hospital_integral(offset[rows] + v, y[rows], sigma_u2, rule)
            else:
                total += _loglik(offset[rows] + v, y[rows])
        return total

    if not use_v:
        return sum(log_region_conditional(r, 0.0) for r in range(dataset.R))

    total = 0.0
    for r in range(dataset.R):
        def log_f(v, r=r):
            return log_region_conditional(r, v) - 0.5 * v * v / sigma_v2

        bound = 10.0 * math.sqrt(sigma_v2) + 10.0
        search = minimize_scalar(lambda v: -log_f(v), bounds=(-bound, bound), method='bounded',
                                 options={'xatol': 1e-10})
        mode = float(search.x)
        step = 1e-4
        curvature = -(log_f(mode + step) - 2.0 * log_f(mode) + log_f(mode - step)) / step ** 2
        curvature = max(curvature, 1.0 / sigma_v2)
        total += rule.log_integral(log_f, mode, 1.0 / math.sqrt(curvature)) \
            - 0.5 * math.log(2.0 * math.pi * sigma_v2)
    return total
