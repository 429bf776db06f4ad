"""
测试公用工具 - 小场景与手工构造的拟合结果
"""

from typing import Dict, Optional, Sequence

import numpy as np

from multilevel_qi.models.fit import FitResult, FitStatus, ModelForm
from multilevel_qi.models.scenario import Scenario

# 20 个医院、约 100 个患者，足够跑通完整流程
TINY_SCENARIO = Scenario(R=4, H_bar=5, n_bar=5)


def make_fit(form: ModelForm, fixed: Dict[str, float], volume: Sequence[int], w: Sequence[int],
             hospital_effects: Optional[Sequence[float]] = None,
             region_effects: Optional[Sequence[float]] = None,
             status: FitStatus = FitStatus.CONVERGED) -> FitResult:
    """手工构造拟合结果"""
    H = len(volume)
    R = len(w)
    if 'hospital' in form.random_effects and hospital_effects is None:
        hospital_effects = np.zeros(H)
    if 'region' in form.random_effects and region_effects is None:
        region_effects = np.zeros(R)
    return FitResult(
        form=form,
        status=status,
        fixed_effects=dict(fixed),
        variance_components={name: 0.25 for name in form.random_effects},
        hospital_effects=None if hospital_effects is None else np.asarray(hospital_effects, dtype=float),
        region_effects=None if region_effects is None else np.asarray(region_effects, dtype=float),
        hospital_volume=np.asarray(volume),
        region_covariate=np.asarray(w),
    )
