"""
模型拟合结果 - 模型形式、拟合选项与拟合结果
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Optional, Tuple

import numpy as np


class ModelForm(str, Enum):
    """四种模型形式"""
    GLM_PATIENT = "glm_patient"      # logit⁻¹(b0 + b1·x)
    RI_HOSPITAL = "ri_hospital"      # logit⁻¹(a^h + b·x)，a^h ~ N(ā, σ_a²)
    MQI_FULL = "mqi_full"            # x + n^h + u^h + w_r + v_r
    MQI_NOREGION = "mqi_noregion"    # x + n^h + u^h

    @property
    def covariates(self) -> Tuple[str, ...]:
        """固定效应列（不含截距）"""
        return {
            ModelForm.GLM_PATIENT: ('x',),
            ModelForm.RI_HOSPITAL: ('x',),
            ModelForm.MQI_FULL: ('x', 'n_h', 'w'),
            ModelForm.MQI_NOREGION: ('x', 'n_h'),
        }[self]

    @property
    def random_effects(self) -> Tuple[str, ...]:
        """随机效应分量"""
        return {
            ModelForm.GLM_PATIENT: (),
            ModelForm.RI_HOSPITAL: ('hospital',),
            ModelForm.MQI_FULL: ('hospital', 'region'),
            ModelForm.MQI_NOREGION: ('hospital',),
        }[self]


class FitStatus(str, Enum):
    """拟合状态"""
    CONVERGED = "converged"
    BOUNDARY = "boundary"            # 方差分量落在边界 0 上
    NOT_CONVERGED = "not_converged"
    SEPARATION = "separation"        # 结局单一或系数发散

    @property
    def usable(self) -> bool:
        """结果能否用于计算指标"""
        return self in (FitStatus.CONVERGED, FitStatus.BOUNDARY)


@dataclass(frozen=True)
class ModelSpec:
    """模型设定；连接函数固定为 logit"""
    form: ModelForm
    link: str = "logit"

    def __post_init__(self):
        if self.link != "logit":
            raise ValueError(f"不支持的连接函数: {self.link}")

    @property
    def is_mixed(self) -> bool:
        return bool(self.form.random_effects)


@dataclass(frozen=True)
class FitOptions:
    """拟合的收敛与边界设置"""
    max_iterations: int = 100
    relative_tolerance: float = 1e-10
    gradient_tolerance: float = 1e-8
    max_outer_iterations: int = 200
    inner_tolerance: float = 1e-12
    inner_max_iterations: int = 50
    separation_bound: float = 30.0
    boundary_threshold: float = 1e-10
    boundary_probe: float = 1e-4
    initial_variance: float = 0.25

    @classmethod
    def from_settings(cls, section: Dict[str, Any]) -> 'FitOptions':
        """从设置的 glmm 段创建，忽略未知键"""
        known = {k: v for k, v in section.items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass(frozen=True)
class FitResult:
    """一种模型形式的拟合结果

    随机效应以零均值偏差存储：RI_HOSPITAL 的 â^h = â̄ + hospital_effects[h]。
    """
    form: ModelForm
    status: FitStatus
    fixed_effects: Dict[str, float]  # 'intercept', 'x', 'n_h', 'w'
    variance_components: Dict[str, float] = field(default_factory=dict)  # 'hospital', 'region'
    hospital_effects: Optional[np.ndarray] = None  # 经验贝叶斯众数 û^h / (â^h - â̄)
    region_effects: Optional[np.ndarray] = None  # 经验贝叶斯众数 v̂_r
    hospital_volume: Optional[np.ndarray] = None  # 拟合时使用的 n^h
    region_covariate: Optional[np.ndarray] = None  # 拟合时使用的 w_r
    loglik: float = float('nan')  # 最终（边际）对数似然
    iterations: int = 0
    gradient_norm: float = float('nan')
    dropped: Tuple[str, ...] = ()  # 因零方差被去掉的协变量
    trace: Tuple[float, ...] = ()  # 对数似然轨迹
    message: str = ''

    @property
    def usable(self) -> bool:
        return self.status.usable

    def coefficient(self, name: str) -> float:
        """固定效应系数，缺省为 0"""
        return float(self.fixed_effects.get(name, 0.0))

    @property
    def has_hospital_effects(self) -> bool:
        return self.hospital_effects is not None

    @property
    def has_region_effects(self) -> bool:
        return self.region_effects is not None

    def hospital_intercepts(self) -> np.ndarray:
        """RI_HOSPITAL 形式的医院截距 â^h"""
        if self.hospital_effects is None:
            raise ValueError(f"{self.form.value} 拟合没有医院随机效应")
        return self.coefficient('intercept') + self.hospital_effects

    def summary(self) -> Dict[str, Any]:
        """诊断摘要（用于日志和 --verbose 输出）"""
        return {
            'form': self.form.value,
            'status': self.status.value,
            'fixed_effects': dict(self.fixed_effects),
            'variance_components': dict(self.variance_components),
            'loglik': self.loglik,
            'iterations': self.iterations,
            'gradient_norm': self.gradient_norm,
        }
