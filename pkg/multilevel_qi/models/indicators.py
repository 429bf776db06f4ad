"""
质量指标模型 - 医院级与区域级指标表
"""

from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np
import pandas as pd

HOSPITAL_INDICATORS: Tuple[str, ...] = ('raw', 'smr', 'rsmr', 'shor', 'shor_noregion')
REGION_INDICATORS: Tuple[str, ...] = ('rshor', 'rspor', 'smr_r')

HOSPITAL_COLUMNS = ('h', 'region', 'n_h', 'theta_true') + HOSPITAL_INDICATORS
REGION_COLUMNS = ('r', 'eta_true') + REGION_INDICATORS


def _validity(values: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
    return {name: np.isfinite(array) for name, array in values.items()}


@dataclass(frozen=True)
class HospitalIndicators:
    """每个医院的五个指标；无效值为 NaN，valid 给出对应的有效标记"""
    region: np.ndarray
    volume: np.ndarray
    theta_true: np.ndarray
    values: Dict[str, np.ndarray]
    valid: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        missing = set(HOSPITAL_INDICATORS) - set(self.values)
        if missing:
            raise ValueError(f"缺少医院指标: {sorted(missing)}")
        if not self.valid:
            object.__setattr__(self, 'valid', _validity(self.values))

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]

    def __len__(self) -> int:
        return int(self.volume.shape[0])

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({
            'h': np.arange(len(self)),
            'region': self.region,
            'n_h': self.volume,
            'theta_true': self.theta_true,
        })
        for name in HOSPITAL_INDICATORS:
            frame[name] = self.values[name]
        return frame[list(HOSPITAL_COLUMNS)]


@dataclass(frozen=True)
class RegionIndicators:
    """每个区域的指标；rates 为 p̄_r^h 矩阵（区域 × 医院，未就诊组合为 NaN）"""
    eta_true: np.ndarray
    values: Dict[str, np.ndarray]
    rates: np.ndarray
    valid: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        missing = set(REGION_INDICATORS) - set(self.values)
        if missing:
            raise ValueError(f"缺少区域指标: {sorted(missing)}")
        if not self.valid:
            object.__setattr__(self, 'valid', _validity(self.values))

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]

    def __len__(self) -> int:
        return int(self.eta_true.shape[0])

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({'r': np.arange(len(self)), 'eta_true': self.eta_true})
        for name in REGION_INDICATORS:
            frame[name] = self.values[name]
        return frame[list(REGION_COLUMNS)]
