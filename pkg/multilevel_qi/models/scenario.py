"""
场景模型 - 模拟场景的自由参数与闭式推导参数
"""

from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Optional, Union

from pydantic import BaseModel, ConfigDict, Field

# 场景参数名（配置文件中的键），顺序与基线参数表一致
SCENARIO_KEYS = (
    'R', 'H_bar', 'n_bar', 'p_y_bar', 'delta_n', 'rho',
    'xi_w_eta', 'xi_n_theta', 'xi_theta_mux', 'sigma_eta', 'sigma_theta', 'sigma_x',
)

# 伯努利区域协变量 w_r ~ Ber(0.5) 的矩
P_W = 0.5
SIGMA_W2 = 0.25


class Scenario(BaseModel):
    """模拟场景（12个自由参数，默认值为基线场景）

    这里只做结构校验（类型、未知键）；取值范围由
    ``multilevel_qi.core.scenario.validate_scenario`` 检查。
    """

    model_config = ConfigDict(extra='forbid', frozen=True)

    R: int = Field(default=20, description="区域数")
    H_bar: int = Field(default=10, description="每个区域的医院数")
    n_bar: int = Field(default=10, description="平均医院病例量")
    p_y_bar: float = Field(default=0.3, description="目标平均结局概率")
    delta_n: int = Field(default=0, description="两类区域最大病例量之差（偶数）")
    rho: float = Field(default=0.0, description="病例组合均值与病例量的相关系数")
    xi_w_eta: float = Field(default=0.5, description="区域效应中由 w_r 解释的方差比例")
    xi_n_theta: float = Field(default=0.5, description="医院效应中由病例量解释的方差比例")
    xi_theta_mux: float = Field(default=1.0, description="病例组合均值方差 / 医院效应方差")
    sigma_eta: float = Field(default=0.5, description="区域效应标准差")
    sigma_theta: float = Field(default=0.5, description="医院效应标准差")
    sigma_x: float = Field(default=0.2, description="医院内患者风险标准差")

    @property
    def hospital_count(self) -> int:
        """医院总数 H = H_bar * R"""
        return self.H_bar * self.R

    def with_value(self, parameter: str, value: Any) -> 'Scenario':
        """返回修改了单个参数的新场景（不做范围校验）"""
        if parameter not in SCENARIO_KEYS:
            raise KeyError(parameter)
        data = self.model_dump()
        data[parameter] = value
        return Scenario(**data)

    def to_dict(self) -> Dict[str, Any]:
        """转换为字典格式"""
        return self.model_dump()


@dataclass(frozen=True)
class DerivedParams:
    """由场景闭式推导出的数据生成常数"""
    delta: float  # 区域协变量系数 δ
    sigma_v2: float  # 未解释区域方差 σ_v²
    gamma: float  # 病例量系数 γ (≤ 0)
    sigma_u2: float  # 未解释医院方差 σ_u²
    lambda_r0: int  # w_r = 0 区域的最大病例量
    lambda_r1: int  # w_r = 1 区域的最大病例量
    sigma_n2: float  # 医院层面 n^h 的方差
    chi: float  # 病例组合均值对病例量的斜率
    sigma_eps2: float  # 病例组合残差方差 σ_ε²
    zeta: float  # 患者层面 w_r = 1 的概率
    En_patient: float  # 患者层面 n^h 的期望
    alpha: float  # 校准截距
    p_w: float = P_W
    sigma_w2: float = SIGMA_W2

    def lambda_for(self, w: int) -> int:
        """按区域类型返回最大病例量"""
        return self.lambda_r1 if w == 1 else self.lambda_r0

    def to_dict(self) -> Dict[str, Any]:
        """转换为字典格式"""
        return asdict(self)


class SweepSpec(BaseModel):
    """单轴扫描：一个参数名和取值列表（省略取值时使用内置网格）"""

    model_config = ConfigDict(extra='forbid', frozen=True)

    parameter: str
    values: Optional[List[Union[int, float]]] = None
