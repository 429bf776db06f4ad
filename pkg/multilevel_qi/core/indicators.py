"""
质量指标计算 - 原始率、SMR、RSMR、SHOR、RSHOR、RSPOR 与区域 SMR

所有函数都是 (数据集, 拟合结果) 的纯函数，返回按医院或区域编号排列的数组；
无法计算的位置为 NaN。
"""

from typing import Mapping, Optional

import numpy as np
from scipy.special import expit

from multilevel_qi.core.glmm import hospital_terms, predict_probability, region_terms
from multilevel_qi.models.dataset import Dataset
from multilevel_qi.models.fit import FitResult, ModelForm
from multilevel_qi.models.indicators import HospitalIndicators, RegionIndicators
from multilevel_qi.utils.logger import get_logger

logger = get_logger(__name__)

# 分母小于该值时比值指标无效
MIN_DENOMINATOR = 1e-12
# 每批最多计算的 logit⁻¹ 个数
_CHUNK_CELLS = 2_000_000


def _ratio(numerator: np.ndarray, denominator: np.ndarray) -> np.ndarray:
    result = np.full(numerator.shape, np.nan)
    ok = denominator >= MIN_DENOMINATOR
    result[ok] = numerator[ok] / denominator[ok]
    return result


def _mean_expit(base: np.ndarray, shifts: np.ndarray) -> np.ndarray:
    """对每个 shift 计算 mean_i logit⁻¹(base_i + shift)"""
    result = np.empty(shifts.shape[0])
    if base.size == 0:
        result.fill(np.nan)
        return result
    step = max(1, _CHUNK_CELLS // base.size)
    for start in range(0, shifts.shape[0], step):
        block = shifts[start:start + step]
        result[start:start + step] = expit(base[None, :] + block[:, None]).mean(axis=1)
    return result


def _require_form(fit: FitResult, *forms: ModelForm):
    if fit.form not in forms:
        expected = ', '.join(form.value for form in forms)
        raise ValueError(f"需要 {expected} 形式的拟合，实际为 {fit.form.value}")


def raw_rate(dataset: Dataset) -> np.ndarray:
    """原始率 ȳ^h = Σy / n^h"""
    p = dataset.patients
    events = np.bincount(p.hospital, p.y.astype(np.float64), minlength=dataset.H)
    return _ratio(events, dataset.patients_per_hospital().astype(np.float64))


def smr(dataset: Dataset, glm_fit: FitResult) -> np.ndarray:
    """SMR^h = Σy / Σp̂，p̂ 取自患者级 GLM"""
    p = dataset.patients
    expected = predict_probability(glm_fit, p.x)
    observed = np.bincount(p.hospital, p.y.astype(np.float64), minlength=dataset.H)
    return _ratio(observed, np.bincount(p.hospital, expected, minlength=dataset.H))


def rsmr(dataset: Dataset, ri_fit: FitResult) -> np.ndarray:
    """RSMR^h = Σ logit⁻¹(â^h + b̂x) / Σ logit⁻¹(â̄ + b̂x)，只对医院自己的患者求和"""
    _require_form(ri_fit, ModelForm.RI_HOSPITAL)
    p = dataset.patients
    average = ri_fit.coefficient('intercept') + ri_fit.coefficient('x') * p.x
    own = average + np.asarray(ri_fit.hospital_effects)[p.hospital]
    numerator = np.bincount(p.hospital, expit(own), minlength=dataset.H)
    denominator = np.bincount(p.hospital, expit(average), minlength=dataset.H)
    return _ratio(numerator, denominator)


def patient_terms(dataset: Dataset, fit: FitResult, include_region: bool) -> np.ndarray:
    """每个患者的患者项：截距 + β̂x [+ 其居住区域的区域项]"""
    p = dataset.patients
    terms = fit.coefficient('intercept') + fit.coefficient('x') * p.x
    if include_region:
        terms = terms + region_terms(fit)[p.region]
    return terms


def shor(dataset: Dataset, mqi_fit: FitResult, include_region: bool = True) -> np.ndarray:
    """SHOR^h：把医院 h 的效应加到全部患者上求平均预测率

    include_region=True 需要 MQI_FULL 拟合，False 需要 MQI_NOREGION 拟合。
    """
    _require_form(mqi_fit, ModelForm.MQI_FULL if include_region else ModelForm.MQI_NOREGION)
    return _mean_expit(patient_terms(dataset, mqi_fit, include_region), hospital_terms(mqi_fit))


def rshor(dataset: Dataset, shor_values: np.ndarray) -> np.ndarray:
    """RSHOR^s = Σ_h (n^h / n^s)·SHOR^h，对位于区域 s 的医院加权"""
    located = dataset.hospitals.region
    volume = dataset.patients_per_hospital().astype(np.float64)
    weighted = np.bincount(located, volume * np.asarray(shor_values, dtype=np.float64), minlength=dataset.R)
    total = np.bincount(located, volume, minlength=dataset.R)
    result = np.full(dataset.R, np.nan)
    ok = total > 0
    result[ok] = weighted[ok] / total[ok]
    return result


def hypothetical_rates(dataset: Dataset, mqi_fit: FitResult) -> np.ndarray:
    """p̄_r^h：同时固定医院 h 与区域 r 的效应，对全部患者求平均预测率

    只计算区域 r 有患者在医院 h 就诊的组合，其余位置为 NaN。
    """
    _require_form(mqi_fit, ModelForm.MQI_FULL)
    p = dataset.patients
    counts = np.bincount(p.region * dataset.H + p.hospital, minlength=dataset.R * dataset.H)
    pairs = np.flatnonzero(counts)
    region, hospital = np.divmod(pairs, dataset.H)

    shifts = hospital_terms(mqi_fit)[hospital] + region_terms(mqi_fit)[region]
    rates = np.full((dataset.R, dataset.H), np.nan)
    rates[region, hospital] = _mean_expit(patient_terms(dataset, mqi_fit, include_region=False), shifts)
    return rates


def rspor(dataset: Dataset, mqi_fit: FitResult, rates: Optional[np.ndarray] = None) -> np.ndarray:
    """RSPOR_r = Σ_h (n_r^h / n_r)·p̄_r^h，按区域 r 居民在各医院的就诊份额加权"""
    if rates is None:
        rates = hypothetical_rates(dataset, mqi_fit)
    p = dataset.patients
    counts = np.bincount(p.region * dataset.H + p.hospital,
                         minlength=dataset.R * dataset.H).reshape(dataset.R, dataset.H).astype(np.float64)
    residents = counts.sum(axis=1)
    weighted = np.where(counts > 0, counts * rates, 0.0).sum(axis=1)
    result = np.full(dataset.R, np.nan)
    ok = residents > 0
    result[ok] = weighted[ok] / residents[ok]
    return result


def regional_smr(dataset: Dataset, glm_fit: FitResult) -> np.ndarray:
    """SMR_r = Σy / Σp̂，对居住在区域 r 的患者求和"""
    p = dataset.patients
    expected = predict_probability(glm_fit, p.x)
    observed = np.bincount(p.region, p.y.astype(np.float64), minlength=dataset.R)
    return _ratio(observed, np.bincount(p.region, expected, minlength=dataset.R))


def compute_all(dataset: Dataset, fits: Mapping[ModelForm, FitResult]):
    """计算全部医院级与区域级指标

    不可用（未收敛、分离）或缺失的拟合只让依赖它的指标整体为 NaN。

    Returns:
        (HospitalIndicators, RegionIndicators)
    """
    def usable(form: ModelForm) -> Optional[FitResult]:
        fit = fits.get(form)
        return fit if fit is not None and fit.usable else None

    missing_h = np.full(dataset.H, np.nan)
    missing_r = np.full(dataset.R, np.nan)

    glm = usable(ModelForm.GLM_PATIENT)
    ri = usable(ModelForm.RI_HOSPITAL)
    full = usable(ModelForm.MQI_FULL)
    noregion = usable(ModelForm.MQI_NOREGION)

    shor_full = shor(dataset, full, include_region=True) if full else missing_h
    hospital_values = {
        'raw': raw_rate(dataset),
        'smr': smr(dataset, glm) if glm else missing_h,
        'rsmr': rsmr(dataset, ri) if ri else missing_h,
        'shor': shor_full,
        'shor_noregion': shor(dataset, noregion, include_region=False) if noregion else missing_h,
    }

    rates = hypothetical_rates(dataset, full) if full else np.full((dataset.R, dataset.H), np.nan)
    region_values = {
        'rshor': rshor(dataset, shor_full) if full else missing_r,
        'rspor': rspor(dataset, full, rates) if full else missing_r,
        'smr_r': regional_smr(dataset, glm) if glm else missing_r,
    }

    hospitals = HospitalIndicators(
        region=dataset.hospitals.region,
        volume=dataset.hospitals.volume,
        theta_true=dataset.hospitals.theta,
        values=hospital_values,
    )
    regions = RegionIndicators(eta_true=dataset.regions.eta, values=region_values, rates=rates)
    logger.debug(f"数据集 {dataset.seed} 指标计算完成")
    return hospitals, regions
