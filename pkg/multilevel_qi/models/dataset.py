"""
数据集模型 - 区域 / 医院 / 患者的嵌套模拟数据

数据按列存放在 numpy 数组中，单条记录通过 ``records()`` 或下标访问。
所有数组在构造后设为只读。
"""

from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, NewType, Optional, Sequence

import numpy as np
import pandas as pd

from multilevel_qi.models.scenario import DerivedParams, Scenario

# 医院所在区域与患者居住区域是两个不同的索引空间
HospitalRegionId = NewType('HospitalRegionId', int)
PatientRegionId = NewType('PatientRegionId', int)

DUMP_COLUMNS = (
    'replication', 'region', 'w_r', 'v_r', 'eta_r', 'hospital', 'n_h', 'u_h',
    'theta_h', 'mu_x_h', 'patient', 'x', 'p_y', 'y',
)


def _frozen(values: Any, dtype) -> np.ndarray:
    array = np.array(values, dtype=dtype, copy=True)
    array.flags.writeable = False
    return array


def _within_hospital_index(hospital: np.ndarray) -> np.ndarray:
    n = hospital.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    starts = np.r_[0, np.flatnonzero(np.diff(hospital)) + 1]
    lengths = np.diff(np.r_[starts, n])
    return np.arange(n) - np.repeat(starts, lengths)


@dataclass(frozen=True)
class Region:
    """单个区域"""
    id: int
    w: int  # 二元区域协变量 w_r
    v: float  # 未解释区域效应 v_r
    eta: float  # 区域总效应 δ·w_r + v_r


@dataclass(frozen=True)
class Hospital:
    """单个医院"""
    id: int
    region: HospitalRegionId
    volume: int  # 病例量 n^h
    u: float  # 未解释医院效应 u^h
    theta: float  # 医院总效应 γ·n^h + u^h
    mu_x: float  # 病例组合均值 χ·n^h + ε^h


@dataclass(frozen=True)
class Patient:
    """单个患者"""
    region: PatientRegionId
    hospital: int
    index: int  # 在医院内的序号
    x: float
    p_y: float
    y: int


@dataclass(frozen=True)
class RegionTable:
    """区域列表（按列存放）"""
    w: np.ndarray
    v: np.ndarray
    eta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'w', _frozen(self.w, np.int8))
        object.__setattr__(self, 'v', _frozen(self.v, np.float64))
        object.__setattr__(self, 'eta', _frozen(self.eta, np.float64))

    def __len__(self) -> int:
        return int(self.w.shape[0])

    def __getitem__(self, r: int) -> Region:
        return Region(id=int(r), w=int(self.w[r]), v=float(self.v[r]), eta=float(self.eta[r]))

    def records(self) -> Iterator[Region]:
        for r in range(len(self)):
            yield self[r]


@dataclass(frozen=True)
class HospitalTable:
    """医院列表（按列存放）"""
    region: np.ndarray
    volume: np.ndarray
    u: np.ndarray
    theta: np.ndarray
    mu_x: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'region', _frozen(self.region, np.int64))
        object.__setattr__(self, 'volume', _frozen(self.volume, np.int64))
        for name in ('u', 'theta', 'mu_x'):
            object.__setattr__(self, name, _frozen(getattr(self, name), np.float64))

    def __len__(self) -> int:
        return int(self.volume.shape[0])

    def __getitem__(self, h: int) -> Hospital:
        return Hospital(
            id=int(h),
            region=HospitalRegionId(int(self.region[h])),
            volume=int(self.volume[h]),
            u=float(self.u[h]),
            theta=float(self.theta[h]),
            mu_x=float(self.mu_x[h]),
        )

    def records(self) -> Iterator[Hospital]:
        for h in range(len(self)):
            yield self[h]


@dataclass(frozen=True)
class PatientTable:
    """患者列表（按列存放，按医院顺序排列）"""
    hospital: np.ndarray
    region: np.ndarray
    x: np.ndarray
    p_y: np.ndarray
    y: np.ndarray
    _index: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, 'hospital', _frozen(self.hospital, np.int64))
        object.__setattr__(self, 'region', _frozen(self.region, np.int64))
        object.__setattr__(self, 'x', _frozen(self.x, np.float64))
        object.__setattr__(self, 'p_y', _frozen(self.p_y, np.float64))
        object.__setattr__(self, 'y', _frozen(self.y, np.int8))
        object.__setattr__(self, '_index', _frozen(_within_hospital_index(self.hospital), np.int64))

    def __len__(self) -> int:
        return int(self.y.shape[0])

    def within_hospital_index(self) -> np.ndarray:
        """每个患者在其医院内的序号"""
        return self._index

    def __getitem__(self, i: int) -> Patient:
        return Patient(
            region=PatientRegionId(int(self.region[i])),
            hospital=int(self.hospital[i]),
            index=int(self._index[i]),
            x=float(self.x[i]),
            p_y=float(self.p_y[i]),
            y=int(self.y[i]),
        )

    def records(self) -> Iterator[Patient]:
        index = self._index
        for i in range(len(self)):
            yield Patient(
                region=PatientRegionId(int(self.region[i])),
                hospital=int(self.hospital[i]),
                index=int(index[i]),
                x=float(self.x[i]),
                p_y=float(self.p_y[i]),
                y=int(self.y[i]),
            )


@dataclass(frozen=True)
class Dataset:
    """一次重复的完整模拟数据，含可观测量与潜在真值"""
    scenario: Optional[Scenario]
    derived: Optional[DerivedParams]
    regions: RegionTable
    hospitals: HospitalTable
    patients: PatientTable
    seed: str = ''  # 种子流标识 (master, point, replication)
    replication: int = 0
    _cache: Dict[str, np.ndarray] = field(default_factory=dict, repr=False, compare=False)

    @property
    def n(self) -> int:
        """患者总数"""
        return len(self.patients)

    @property
    def H(self) -> int:
        """医院总数"""
        return len(self.hospitals)

    @property
    def R(self) -> int:
        """区域总数"""
        return len(self.regions)

    def patients_per_hospital(self) -> np.ndarray:
        """每个医院的患者数"""
        if 'per_hospital' not in self._cache:
            self._cache['per_hospital'] = np.bincount(self.patients.hospital, minlength=self.H)
        return self._cache['per_hospital']

    def patients_per_region(self) -> np.ndarray:
        """每个（居住）区域的患者数"""
        if 'per_region' not in self._cache:
            self._cache['per_region'] = np.bincount(self.patients.region, minlength=self.R)
        return self._cache['per_region']

    def check_nesting(self) -> bool:
        """检查每个患者的居住区域与其医院所在区域一致，且每个医院患者数等于 n^h"""
        same_region = np.array_equal(self.patients.region, self.hospitals.region[self.patients.hospital])
        return bool(same_region and np.array_equal(self.patients_per_hospital(), self.hospitals.volume))

    def to_frame(self) -> pd.DataFrame:
        """展开为平面表（每个患者一行）"""
        p = self.patients
        h = self.hospitals
        r = self.regions
        hosp = p.hospital
        reg = h.region[hosp]
        return pd.DataFrame({
            'replication': np.full(self.n, self.replication, dtype=np.int64),
            'region': reg,
            'w_r': r.w[reg],
            'v_r': r.v[reg],
            'eta_r': r.eta[reg],
            'hospital': hosp,
            'n_h': h.volume[hosp],
            'u_h': h.u[hosp],
            'theta_h': h.theta[hosp],
            'mu_x_h': h.mu_x[hosp],
            'patient': p.within_hospital_index(),
            'x': p.x,
            'p_y': p.p_y,
            'y': p.y,
        }, columns=list(DUMP_COLUMNS))

    @classmethod
    def from_arrays(
        cls,
        x: Sequence[float],
        y: Sequence[int],
        hospital: Sequence[int],
        hospital_region: Sequence[int],
        w: Sequence[int],
        patient_region: Optional[Sequence[int]] = None,
        theta: Optional[Sequence[float]] = None,
        eta: Optional[Sequence[float]] = None,
        p_y: Optional[Sequence[float]] = None,
    ) -> 'Dataset':
        """由最少的可观测量构造数据集（用于手工算例）

        病例量 n^h 取每个医院的患者数；未给出的潜在真值填 0。
        """
        hospital = np.asarray(hospital, dtype=np.int64)
        hospital_region = np.asarray(hospital_region, dtype=np.int64)
        H = hospital_region.shape[0]
        R = len(w)
        volume = np.bincount(hospital, minlength=H)
        if patient_region is None:
            patient_region = hospital_region[hospital]
        theta = np.zeros(H) if theta is None else np.asarray(theta, dtype=np.float64)
        eta = np.zeros(R) if eta is None else np.asarray(eta, dtype=np.float64)
        p_y = np.full(len(y), np.nan) if p_y is None else p_y
        return cls(
            scenario=None,
            derived=None,
            regions=RegionTable(w=w, v=np.zeros(R), eta=eta),
            hospitals=HospitalTable(region=hospital_region, volume=volume, u=np.zeros(H), theta=theta, mu_x=np.zeros(H)),
            patients=PatientTable(hospital=hospital, region=patient_region, x=x, p_y=p_y, y=y),
        )
