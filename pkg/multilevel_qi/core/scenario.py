"""
场景模块 - 校验模拟场景并以闭式公式补全全部数据生成常数
"""

import math
import os
from typing import Any, Dict, List, Mapping, Tuple

import yaml
from pydantic import ValidationError
from scipy.special import logit

from multilevel_qi.models.scenario import SCENARIO_KEYS, SIGMA_W2, DerivedParams, Scenario
from multilevel_qi.utils.logger import get_logger

logger = get_logger(__name__)


class ScenarioError(ValueError):
    """场景或实验计划不合法"""


class ConfigError(ValueError):
    """配置文件缺失、无法解析或包含未知键"""


# 单轴扫描网格（内置预设）
SWEEP_GRIDS: Dict[str, Tuple[float, ...]] = {
    'rho': (-0.8, -0.6, -0.4, -0.2, 0.0, 0.2, 0.4, 0.6, 0.8),
    'xi_theta_mux': (0.2, 0.5, 0.75, 1.0, 1.25, 1.5, 2.0, 5.0, 7.5, 10.0),
    'xi_n_theta': (0.01, 0.1, 0.2, 0.4, 0.5, 0.6, 0.8, 0.9, 0.99),
    'delta_n': (-16, -10, -6, -2, 0, 2, 6, 10, 16),
    'p_y_bar': (0.03, 0.05, 0.1, 0.15, 0.2, 0.3, 0.4, 0.5),
    'sigma_eta': (0.0, 0.1, 0.25, 0.5, 0.75, 1.0, 2.0),
}

BASELINE = Scenario()


def check_scenario(s: Scenario) -> List[str]:
    """检查场景取值范围

    返回:
        List[str]: 违反的约束说明；为空表示合法
    """
    errors = []

    for key in ('R', 'H_bar'):
        if getattr(s, key) < 1:
            errors.append(f"{key} 必须 >= 1，当前为 {getattr(s, key)}")
    if s.n_bar < 2:
        errors.append(f"n_bar 必须 >= 2，当前为 {s.n_bar}")
    if not 0.0 < s.p_y_bar < 1.0:
        errors.append(f"p_y_bar 必须在 (0, 1) 内，当前为 {s.p_y_bar}")
    if s.delta_n % 2 != 0:
        errors.append(f"delta_n 必须为偶数，当前为 {s.delta_n}")
    bound = 4 * (s.n_bar - 1)
    if abs(s.delta_n) > bound:
        errors.append(f"|delta_n| 必须 <= 4(n_bar-1) = {bound}，当前为 {s.delta_n}")
    if not -1.0 < s.rho < 1.0:
        errors.append(f"rho 必须在 (-1, 1) 内，当前为 {s.rho}")
    for key in ('xi_w_eta', 'xi_n_theta'):
        value = getattr(s, key)
        if not 0.0 <= value < 1.0:
            errors.append(f"{key} 必须在 [0, 1) 内，当前为 {value}")
    if s.xi_theta_mux < 0:
        errors.append(f"xi_theta_mux 必须 >= 0，当前为 {s.xi_theta_mux}")
    for key in ('sigma_eta', 'sigma_x'):
        if getattr(s, key) < 0:
            errors.append(f"{key} 必须 >= 0，当前为 {getattr(s, key)}")
    if s.sigma_theta <= 0:
        errors.append(f"sigma_theta 必须 > 0，当前为 {s.sigma_theta}")

    return errors


def validate_scenario(s: Scenario) -> Scenario:
    """校验场景，合法时原样返回

    Raises:
        ScenarioError: 任一约束不满足，消息列出所有违反的约束
    """
    errors = check_scenario(s)
    if errors:
        raise ScenarioError("; ".join(errors))
    return s


def _sign(value: float) -> float:
    # sign(0) = 0
    return float((value > 0) - (value < 0))


def _explained_coefficient(sigma_unexplained: float, sigma_covariate: float, share: float) -> float:
    """sigma_unexplained / sigma_covariate * sqrt(share / (1 - share))"""
    if sigma_unexplained == 0.0 or share == 0.0:
        return 0.0
    return sigma_unexplained / sigma_covariate * math.sqrt(share / (1.0 - share))


def derive_parameters(s: Scenario) -> DerivedParams:
    """按闭式公式由场景推导全部数据生成常数"""
    validate_scenario(s)

    # 区域层面
    sigma_v2 = (1.0 - s.xi_w_eta) * s.sigma_eta ** 2
    delta = _explained_coefficient(math.sqrt(sigma_v2), math.sqrt(SIGMA_W2), s.xi_w_eta)

    # 病例量分布
    lambda_r0 = 2 * s.n_bar - 1 - s.delta_n // 2
    lambda_r1 = 2 * s.n_bar - 1 + s.delta_n // 2
    sigma_n2 = (lambda_r1 ** 2 + lambda_r0 ** 2 - 2) / 24.0 + (lambda_r1 - lambda_r0) ** 2 / 16.0
    sigma_n = math.sqrt(sigma_n2)

    # 医院层面
    sigma_u2 = (1.0 - s.xi_n_theta) * s.sigma_theta ** 2
    gamma = -_explained_coefficient(math.sqrt(sigma_u2), sigma_n, s.xi_n_theta)

    # 病例组合
    sigma_eps2 = s.xi_theta_mux * (1.0 - s.rho ** 2) * s.sigma_theta ** 2
    chi = _sign(s.rho) * math.sqrt(sigma_eps2) / sigma_n * math.sqrt(s.rho ** 2 / (1.0 - s.rho ** 2))

    # 患者层面（按病例量加权）的期望
    zeta = (lambda_r1 + 1) / (lambda_r0 + lambda_r1 + 2)
    en_patient = (zeta * (2 * lambda_r1 + 1) + (1.0 - zeta) * (2 * lambda_r0 + 1)) / 3.0

    # 一阶泰勒展开校准的截距
    alpha = float(logit(s.p_y_bar)) - (chi + gamma) * en_patient - zeta * delta

    derived = DerivedParams(
        delta=delta,
        sigma_v2=sigma_v2,
        gamma=gamma,
        sigma_u2=sigma_u2,
        lambda_r0=lambda_r0,
        lambda_r1=lambda_r1,
        sigma_n2=sigma_n2,
        chi=chi,
        sigma_eps2=sigma_eps2,
        zeta=zeta,
        En_patient=en_patient,
        alpha=alpha,
    )
    logger.debug(f"推导参数: {derived}")
    return derived


def scenario_from_mapping(data: Mapping[str, Any]) -> Scenario:
    """由配置字典构造场景，缺失的键取基线值

    Raises:
        ConfigError: 出现未知键或类型错误
        ScenarioError: 取值越界
    """
    unknown = [key for key in data if key not in SCENARIO_KEYS]
    if unknown:
        raise ConfigError(f"未知的场景参数: {', '.join(map(str, unknown))}")
    try:
        scenario = Scenario(**dict(data))
    except ValidationError as e:
        raise ConfigError(f"场景参数类型错误: {_first_error(e)}") from e
    return validate_scenario(scenario)


def load_scenario(path: str) -> Scenario:
    """从YAML文件加载场景（只读取场景键，忽略 sweep/experiment 段）"""
    data = read_yaml(path)
    scenario_data = {k: v for k, v in data.items() if k not in ('sweep', 'experiment')}
    return scenario_from_mapping(scenario_data)


def read_yaml(path: str) -> Dict[str, Any]:
    """读取YAML配置文件为字典"""
    if not os.path.exists(path):
        raise ConfigError(f"配置文件不存在: {path}")
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"无法解析配置文件 {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"配置文件顶层必须是键值映射: {path}")
    return data


def _first_error(error: ValidationError) -> str:
    first = error.errors()[0]
    location = '.'.join(str(part) for part in first.get('loc', ()))
    return f"{location}: {first.get('msg', '')}"
