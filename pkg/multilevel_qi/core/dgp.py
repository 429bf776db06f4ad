"""
数据生成过程 - 由场景与推导参数抽样区域、医院、患者与二元结局
"""

import math
import os
from typing import Iterable, Optional

import numpy as np
import pandas as pd
from scipy.special import expit

from multilevel_qi.core.scenario import derive_parameters, validate_scenario
from multilevel_qi.core.streams import format_stream_key, replication_rng, stream_key
from multilevel_qi.models.dataset import Dataset, HospitalTable, PatientTable, RegionTable
from multilevel_qi.models.scenario import P_W, DerivedParams, Scenario
from multilevel_qi.utils.logger import get_logger

logger = get_logger(__name__)


def generate_regions(s: Scenario, d: DerivedParams, rng: np.random.Generator) -> RegionTable:
    """抽样 R 个区域：w_r ~ Ber(0.5)，v_r ~ N(0, σ_v²)，η_r = δ·w_r + v_r"""
    w = (rng.random(s.R) < P_W).astype(np.int8)
    v = math.sqrt(d.sigma_v2) * rng.standard_normal(s.R)
    eta = d.delta * w + v
    return RegionTable(w=w, v=v, eta=eta)


def generate_hospitals(s: Scenario, d: DerivedParams, regions: RegionTable,
                       rng: np.random.Generator) -> HospitalTable:
    """每个区域抽样 H_bar 个医院

    病例量 n^h 在 {1,…,λ_r} 上均匀分布，用逆变换抽样保证每个医院恰好消耗一个均匀数。
    """
    R = len(regions)
    region = np.repeat(np.arange(R), s.H_bar)
    lam = np.where(regions.w[region] == 1, d.lambda_r1, d.lambda_r0)

    uniform = rng.random(region.shape[0])
    volume = np.minimum(np.floor(uniform * lam).astype(np.int64) + 1, lam)

    u = math.sqrt(d.sigma_u2) * rng.standard_normal(region.shape[0])
    eps = math.sqrt(d.sigma_eps2) * rng.standard_normal(region.shape[0])

    theta = d.gamma * volume + u
    mu_x = d.chi * volume + eps
    return HospitalTable(region=region, volume=volume, u=u, theta=theta, mu_x=mu_x)


def outcome_probability(alpha: float, x: np.ndarray, theta: np.ndarray, eta: np.ndarray) -> np.ndarray:
    """p_y = logit⁻¹(α + x + θ^h + η_r)，x 的系数为 1"""
    return expit(alpha + x + theta + eta)


def generate_patients(s: Scenario, d: DerivedParams, hospitals: HospitalTable,
                      regions: RegionTable, rng: np.random.Generator) -> PatientTable:
    """为每个医院抽样恰好 n^h 个患者：x ~ N(μ_x^h, σ_x²)，y ~ Ber(p_y)"""
    hospital = np.repeat(np.arange(len(hospitals)), hospitals.volume)
    region = hospitals.region[hospital]

    x = hospitals.mu_x[hospital] + s.sigma_x * rng.standard_normal(hospital.shape[0])
    p_y = outcome_probability(d.alpha, x, hospitals.theta[hospital], regions.eta[region])
    y = (rng.random(hospital.shape[0]) < p_y).astype(np.int8)
    return PatientTable(hospital=hospital, region=region, x=x, p_y=p_y, y=y)


def generate_dataset(s: Scenario, seed: int, point: int = 0, replication: int = 0,
                     derived: Optional[DerivedParams] = None) -> Dataset:
    """生成一次重复的完整数据集；结果只取决于 (场景, 种子, 点序号, 重复序号)"""
    validate_scenario(s)
    d = derived or derive_parameters(s)
    key = stream_key(seed, point, replication)
    rng = replication_rng(*key)

    regions = generate_regions(s, d, rng)
    hospitals = generate_hospitals(s, d, regions, rng)
    patients = generate_patients(s, d, hospitals, regions, rng)

    dataset = Dataset(
        scenario=s,
        derived=d,
        regions=regions,
        hospitals=hospitals,
        patients=patients,
        seed=format_stream_key(key),
        replication=replication,
    )
    logger.debug(f"生成数据集 {dataset.seed}: R={dataset.R}, H={dataset.H}, n={dataset.n}")
    return dataset


def dump_datasets(datasets: Iterable[Dataset], filepath: str) -> str:
    """把数据集写成平面CSV（每个患者一行）"""
    directory = os.path.dirname(filepath)
    if directory:
        os.makedirs(directory, exist_ok=True)
    frames = [dataset.to_frame() for dataset in datasets]
    frame = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame()
    frame.to_csv(filepath, index=False)
    logger.info(f"数据集已写入 {filepath} ({len(frame)} 行)")
    return filepath
