"""
估计核心 - 逻辑回归 GLM 与嵌套随机截距 GLMM 的拟合

GLM 用迭代重加权最小二乘 (IRLS)。GLMM 最大化拉普拉斯近似的边际对数似然：
外层对固定效应与对数方差分量做拟牛顿 (BFGS) 优化，内层对随机效应做牛顿迭代求
联合后验众数。联合 Hessian 按区域分块，每块是"医院对角 + 区域一行一列"的箭头
矩阵，用 Schur 补在 O(n) 内求解、求行列式和逆矩阵对角元。
"""

import math
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit

from multilevel_qi.models.dataset import Dataset
from multilevel_qi.models.fit import FitOptions, FitResult, FitStatus, ModelForm, ModelSpec
from multilevel_qi.settings import settings
from multilevel_qi.utils.logger import get_logger

logger = get_logger(__name__)

# 对数方差的取值范围，防止 exp 溢出
_LOG_VARIANCE_RANGE = (-50.0, 20.0)


class PredictionError(KeyError):
    """请求了拟合中不存在的医院/区域或效应"""


def default_options() -> FitOptions:
    """从全局设置读取拟合选项"""
    return FitOptions.from_settings(settings.section('glmm'))


def _as_form(spec: Union[ModelSpec, ModelForm, str]) -> ModelForm:
    if isinstance(spec, ModelSpec):
        return spec.form
    return ModelForm(spec)


def _bernoulli_loglik(eta: np.ndarray, y: np.ndarray) -> float:
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def design_matrix(dataset: Dataset, form: ModelForm) -> Tuple[np.ndarray, List[str], Tuple[str, ...]]:
    """构造固定效应设计矩阵

    返回:
        (X, 列名, 被去掉的零方差协变量)
    """
    p = dataset.patients
    candidates = {
        'x': p.x,
        'n_h': dataset.hospitals.volume[p.hospital].astype(np.float64),
        'w': dataset.regions.w[p.region].astype(np.float64),
    }
    columns = [np.ones(dataset.n)]
    names = ['intercept']
    dropped = []
    for name in form.covariates:
        values = candidates[name]
        if values.size == 0 or np.ptp(values) == 0.0:
            dropped.append(name)
            continue
        columns.append(values)
        names.append(name)
    return np.column_stack(columns), names, tuple(dropped)


# ---------------------------------------------------------------------------
# GLM
# ---------------------------------------------------------------------------

def _irls(X: np.ndarray, y: np.ndarray, options: FitOptions) -> Dict[str, object]:
    """逻辑回归的 IRLS（牛顿法），带步长减半"""
    n, k = X.shape
    beta = np.zeros(k)
    if n == 0 or y.min() == y.max():
        return {'beta': np.full(k, np.nan), 'loglik': float('nan'), 'iterations': 0,
                'gradient_norm': float('nan'), 'status': FitStatus.SEPARATION, 'trace': (),
                'message': '结局只有一个取值，最大似然估计不存在'}

    beta[0] = math.log(y.mean() / (1.0 - y.mean()))
    loglik = _bernoulli_loglik(X @ beta, y)
    trace = [loglik]
    status = FitStatus.NOT_CONVERGED
    gradient_norm = float('nan')
    iterations = 0
    message = ''

    for iterations in range(1, options.max_iterations + 1):
        p = expit(X @ beta)
        gradient = X.T @ (y - p)
        gradient_norm = float(np.max(np.abs(gradient)))
        if gradient_norm < options.gradient_tolerance:
            status = FitStatus.CONVERGED
            break

        weights = p * (1.0 - p)
        hessian = X.T @ (weights[:, None] * X)
        try:
            step = np.linalg.solve(hessian, gradient)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hessian, gradient, rcond=None)[0]

        scale = 1.0
        while True:
            candidate = beta + scale * step
            new_loglik = _bernoulli_loglik(X @ candidate, y)
            if new_loglik >= loglik - 1e-12 * abs(loglik) or scale < 1e-8:
                break
            scale *= 0.5

        beta = candidate
        change = abs(new_loglik - loglik) / max(abs(loglik), 1e-300)
        loglik = new_loglik
        trace.append(loglik)

        if np.max(np.abs(beta)) > options.separation_bound:
            status = FitStatus.SEPARATION
            message = f'系数发散 (|b| > {options.separation_bound})'
            break
        if change < options.relative_tolerance:
            gradient_norm = float(np.max(np.abs(X.T @ (y - expit(X @ beta)))))
            status = FitStatus.CONVERGED
            break
    else:
        message = f'{options.max_iterations} 次迭代后仍未收敛'

    return {'beta': beta, 'loglik': loglik, 'iterations': iterations, 'gradient_norm': gradient_norm,
            'status': status, 'trace': tuple(trace), 'message': message}


def fit_glm(dataset: Dataset, form: Union[ModelSpec, ModelForm, str] = ModelForm.GLM_PATIENT,
            options: Optional[FitOptions] = None) -> FitResult:
    """拟合不含随机效应的逻辑回归

    默认是 SMR 使用的 logit⁻¹(b0 + b1·x)；传入 MQI 形式时拟合相同协变量的纯固定效应模型。
    """
    form = _as_form(form)
    options = options or default_options()
    X, names, dropped = design_matrix(dataset, form)
    y = dataset.patients.y.astype(np.float64)

    fitted = _irls(X, y, options)
    fixed = {name: float(value) for name, value in zip(names, fitted['beta'])}
    for name in dropped:
        fixed[name] = 0.0

    result = FitResult(
        form=form,
        status=fitted['status'],
        fixed_effects=fixed,
        hospital_volume=dataset.hospitals.volume,
        region_covariate=dataset.regions.w,
        loglik=fitted['loglik'],
        iterations=fitted['iterations'],
        gradient_norm=fitted['gradient_norm'],
        dropped=dropped,
        trace=fitted['trace'],
        message=fitted['message'],
    )
    logger.debug(f"GLM 拟合: {result.summary()}")
    return result


# ---------------------------------------------------------------------------
# 嵌套分块 Hessian
# ---------------------------------------------------------------------------

class _NestedBlocks:
    """随机效应负 Hessian H = Z'WZ + Λ⁻¹ 的分块运算

    医院嵌套在区域内：医院块对角，区域块对角，医院-区域交叉项等于医院的权重和。
    未启用的分量用 None 表示。
    """

    def __init__(self, weights: np.ndarray, hosp: np.ndarray, region: np.ndarray,
                 hosp_region: np.ndarray, H: int, R: int,
                 prec_u: Optional[float], prec_v: Optional[float]):
        self.hosp = hosp
        self.region = region
        self.hosp_region = hosp_region
        self.R = R
        self.use_u = prec_u is not None
        self.use_v = prec_v is not None

        if self.use_u:
            self.cross = np.bincount(hosp, weights, minlength=H)
            self.d = self.cross + prec_u
        if self.use_v:
            self.e = np.bincount(region, weights, minlength=R) + prec_v
        if self.use_u and self.use_v:
            self.schur = self.e - np.bincount(hosp_region, self.cross ** 2 / self.d, minlength=R)

    def solve(self, g_u: Optional[np.ndarray], g_v: Optional[np.ndarray]):
        """求解 H·[du; dv] = [g_u; g_v]"""
        if self.use_u and self.use_v:
            dv = (g_v - np.bincount(self.hosp_region, self.cross * g_u / self.d, minlength=self.R)) / self.schur
            du = (g_u - self.cross * dv[self.hosp_region]) / self.d
            return du, dv
        if self.use_u:
            return g_u / self.d, None
        if self.use_v:
            return None, g_v / self.e
        return None, None

    def logdet(self) -> float:
        total = 0.0
        if self.use_u:
            total += float(np.sum(np.log(self.d)))
        if self.use_u and self.use_v:
            total += float(np.sum(np.log(self.schur)))
        elif self.use_v:
            total += float(np.sum(np.log(self.e)))
        return total

    def inverse_diagonals(self):
        """H⁻¹ 的医院对角、区域对角与医院-区域交叉元"""
        inv_hh = inv_rr = inv_hr = None
        if self.use_u and self.use_v:
            ratio = self.cross / self.d
            inv_rr = 1.0 / self.schur
            inv_hr = -ratio * inv_rr[self.hosp_region]
            inv_hh = 1.0 / self.d + ratio ** 2 * inv_rr[self.hosp_region]
        elif self.use_u:
            inv_hh = 1.0 / self.d
        elif self.use_v:
            inv_rr = 1.0 / self.e
        return inv_hh, inv_rr, inv_hr

    def leverage(self) -> np.ndarray:
        """每个患者的 (Z H⁻¹ Z')_ii"""
        inv_hh, inv_rr, inv_hr = self.inverse_diagonals()
        s = 0.0
        if inv_hh is not None:
            s = s + inv_hh[self.hosp]
        if inv_rr is not None:
            s = s + inv_rr[self.region]
        if inv_hr is not None:
            s = s + 2.0 * inv_hr[self.hosp]
        return s


# ---------------------------------------------------------------------------
# 拉普拉斯目标函数
# ---------------------------------------------------------------------------

class LaplaceObjective:
    """拉普拉斯近似边际对数似然及其解析梯度

    参数向量为 [β..., log σ_u²（若启用）, log σ_v²（若启用）]。
    """

    def __init__(self, dataset: Dataset, form: Union[ModelForm, str],
                 components: Optional[Sequence[str]] = None,
                 options: Optional[FitOptions] = None,
                 standardize: bool = False):
        self.form = ModelForm(form)
        self.options = options or default_options()
        self.components = tuple(self.form.random_effects if components is None else components)
        unknown = set(self.components) - set(self.form.random_effects)
        if unknown:
            raise ValueError(f"{self.form.value} 不包含随机效应分量: {sorted(unknown)}")

        X, names, dropped = design_matrix(dataset, self.form)
        self.names = names
        self.dropped = dropped
        self.center = np.zeros(X.shape[1])
        self.scale = np.ones(X.shape[1])
        if standardize and X.shape[1] > 1:
            self.center[1:] = X[:, 1:].mean(axis=0)
            self.scale[1:] = X[:, 1:].std(axis=0)
            X = X.copy()
            X[:, 1:] = (X[:, 1:] - self.center[1:]) / self.scale[1:]
        self.X = X
        self.y = dataset.patients.y.astype(np.float64)
        self.hosp = dataset.patients.hospital
        self.region = dataset.patients.region
        self.hosp_region = dataset.hospitals.region
        self.H = dataset.H
        self.R = dataset.R
        self.use_u = 'hospital' in self.components
        self.use_v = 'region' in self.components

        if self.use_u and self.use_v and not np.array_equal(self.region, self.hosp_region[self.hosp]):
            raise ValueError("医院与区域随机效应必须嵌套（患者居住区域须等于医院所在区域）")

        self.u = np.zeros(self.H)
        self.v = np.zeros(self.R)
        self.inner_iterations = 0

    @property
    def n_params(self) -> int:
        return self.X.shape[1] + int(self.use_u) + int(self.use_v)

    def unpack(self, params: np.ndarray):
        k = self.X.shape[1]
        beta = np.asarray(params[:k], dtype=np.float64)
        pos = k
        tau_u = tau_v = None
        if self.use_u:
            tau_u = float(np.clip(params[pos], *_LOG_VARIANCE_RANGE))
            pos += 1
        if self.use_v:
            tau_v = float(np.clip(params[pos], *_LOG_VARIANCE_RANGE))
        return beta, tau_u, tau_v

    def to_original_scale(self, beta: np.ndarray) -> np.ndarray:
        """把标准化坐标下的系数换回原始协变量尺度"""
        original = beta / self.scale
        original[0] = beta[0] - float(np.sum(beta[1:] * self.center[1:] / self.scale[1:]))
        return original

    def to_standardized_scale(self, beta: np.ndarray) -> np.ndarray:
        standardized = beta * self.scale
        standardized[0] = beta[0] + float(np.sum(beta[1:] * self.center[1:]))
        return standardized

    def _linear(self, offset: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        eta = offset
        if self.use_u:
            eta = eta + u[self.hosp]
        if self.use_v:
            eta = eta + v[self.region]
        return eta

    def _penalized(self, offset, u, v, prec_u, prec_v) -> float:
        value = _bernoulli_loglik(self._linear(offset, u, v), self.y)
        if self.use_u:
            value -= 0.5 * prec_u * float(u @ u)
        if self.use_v:
            value -= 0.5 * prec_v * float(v @ v)
        return value

    def modes(self, beta: np.ndarray, prec_u: Optional[float], prec_v: Optional[float]):
        """内层牛顿迭代：给定固定效应与精度，求随机效应的联合后验众数"""
        offset = self.X @ beta
        u = np.zeros(self.H)
        v = np.zeros(self.R)
        current = self._penalized(offset, u, v, prec_u, prec_v)

        for iteration in range(1, self.options.inner_max_iterations + 1):
            p = expit(self._linear(offset, u, v))
            resid = self.y - p
            g_u = np.bincount(self.hosp, resid, minlength=self.H) - prec_u * u if self.use_u else None
            g_v = np.bincount(self.region, resid, minlength=self.R) - prec_v * v if self.use_v else None
            blocks = _NestedBlocks(p * (1.0 - p), self.hosp, self.region, self.hosp_region,
                                   self.H, self.R, prec_u, prec_v)
            du, dv = blocks.solve(g_u, g_v)

            scale = 1.0
            while True:
                new_u = u + scale * du if self.use_u else u
                new_v = v + scale * dv if self.use_v else v
                candidate = self._penalized(offset, new_u, new_v, prec_u, prec_v)
                if candidate >= current - 1e-13 * abs(current) or scale < 1e-8:
                    break
                scale *= 0.5

            step = 0.0
            if self.use_u:
                step = max(step, float(np.max(np.abs(new_u - u), initial=0.0)))
            if self.use_v:
                step = max(step, float(np.max(np.abs(new_v - v), initial=0.0)))
            u, v, current = new_u, new_v, candidate
            self.inner_iterations = iteration
            if step < self.options.inner_tolerance:
                break

        return offset, u, v

    def value(self, params: np.ndarray) -> float:
        return self.value_and_grad(params)[0]

    def value_and_grad(self, params: np.ndarray) -> Tuple[float, np.ndarray]:
        """拉普拉斯边际对数似然及其对参数的梯度"""
        beta, tau_u, tau_v = self.unpack(params)
        prec_u = math.exp(-tau_u) if self.use_u else None
        prec_v = math.exp(-tau_v) if self.use_v else None

        offset, u, v = self.modes(beta, prec_u, prec_v)
        self.u, self.v = u, v
        eta = self._linear(offset, u, v)
        p = expit(eta)
        w = p * (1.0 - p)
        blocks = _NestedBlocks(w, self.hosp, self.region, self.hosp_region, self.H, self.R, prec_u, prec_v)

        value = _bernoulli_loglik(eta, self.y) - 0.5 * blocks.logdet()
        if self.use_u:
            value -= 0.5 * prec_u * float(u @ u) + 0.5 * self.H * tau_u
        if self.use_v:
            value -= 0.5 * prec_v * float(v @ v) + 0.5 * self.R * tau_v

        # log det H 对随机效应的导数 a = Z'(t∘s)，t = ∂w/∂η
        t = w * (1.0 - 2.0 * p)
        ts = t * blocks.leverage()
        a_u = np.bincount(self.hosp, ts, minlength=self.H) if self.use_u else None
        a_v = np.bincount(self.region, ts, minlength=self.R) if self.use_v else None
        q_u, q_v = blocks.solve(a_u, a_v)
        zq = self._linear(np.zeros_like(eta), q_u, q_v)

        grad_beta = self.X.T @ (self.y - p - 0.5 * ts + 0.5 * w * zq)
        grads = [grad_beta]
        inv_hh, inv_rr, _ = blocks.inverse_diagonals()
        if self.use_u:
            grads.append(np.array([
                0.5 * prec_u * float(u @ u) - 0.5 * self.H
                + 0.5 * prec_u * float(np.sum(inv_hh))
                - 0.5 * prec_u * float(q_u @ u)
            ]))
        if self.use_v:
            grads.append(np.array([
                0.5 * prec_v * float(v @ v) - 0.5 * self.R
                + 0.5 * prec_v * float(np.sum(inv_rr))
                - 0.5 * prec_v * float(q_v @ v)
            ]))
        return value, np.concatenate(grads)


# ---------------------------------------------------------------------------
# GLMM 拟合
# ---------------------------------------------------------------------------

def _polish(objective: LaplaceObjective, params: np.ndarray, options: FitOptions,
            max_steps: int = 8, step: float = 1e-5):
    """用差分 Hessian 的牛顿步细化 BFGS 的结果"""
    value, grad = objective.value_and_grad(params)
    for _ in range(max_steps):
        if np.max(np.abs(grad)) <= options.gradient_tolerance:
            break
        k = params.shape[0]
        hessian = np.empty((k, k))
        for j in range(k):
            e = np.zeros(k)
            e[j] = step
            hessian[:, j] = (objective.value_and_grad(params + e)[1]
                             - objective.value_and_grad(params - e)[1]) / (2.0 * step)
        hessian = 0.5 * (hessian + hessian.T)
        try:
            direction = -np.linalg.solve(hessian, grad)
        except np.linalg.LinAlgError:
            break
        candidate = params + direction
        new_value, new_grad = objective.value_and_grad(candidate)
        if not np.isfinite(new_value) or new_value < value - 1e-10 * abs(value):
            break
        params, value, grad = candidate, new_value, new_grad
    return params, value, grad


def _fit_components(dataset: Dataset, form: ModelForm, components: Tuple[str, ...],
                    options: FitOptions) -> FitResult:
    """按给定的随机效应分量拟合；分量为空时退化为 GLM"""
    glm = fit_glm(dataset, form, options)
    if not components or glm.status == FitStatus.SEPARATION:
        return glm

    objective = LaplaceObjective(dataset, form, components, options, standardize=True)
    beta0 = objective.to_standardized_scale(np.array([glm.fixed_effects[name] for name in objective.names]))
    params0 = np.concatenate([beta0, np.full(len(components), math.log(options.initial_variance))])

    trace: List[float] = []

    def negative(params):
        value, grad = objective.value_and_grad(params)
        return -value, -grad

    def record(params):
        trace.append(objective.value(params))

    outcome = minimize(negative, params0, jac=True, method='BFGS', callback=record,
                       options={'gtol': options.gradient_tolerance, 'maxiter': options.max_outer_iterations})
    params = outcome.x
    value, grad = objective.value_and_grad(params)
    iterations = int(outcome.nit)

    if np.max(np.abs(grad)) > options.gradient_tolerance:
        params, value, grad = _polish(objective, params, options)
        trace.append(value)

    # 在最终参数处重新求众数，保证 objective.u / objective.v 与 params 对应
    value, grad = objective.value_and_grad(params)
    gradient_norm = float(np.max(np.abs(grad)))
    relative_change = (abs(trace[-1] - trace[-2]) / max(abs(trace[-1]), 1e-300)) if len(trace) >= 2 else float('inf')
    converged = gradient_norm <= options.gradient_tolerance or relative_change < options.relative_tolerance

    beta_std, tau_u, tau_v = objective.unpack(params)
    beta = objective.to_original_scale(beta_std)
    fixed = {name: float(b) for name, b in zip(objective.names, beta)}
    for name in objective.dropped:
        fixed[name] = 0.0

    variances: Dict[str, float] = {}
    hospital_effects = region_effects = None
    if 'hospital' in form.random_effects:
        variances['hospital'] = math.exp(tau_u) if objective.use_u else 0.0
        hospital_effects = objective.u.copy() if objective.use_u else np.zeros(dataset.H)
    if 'region' in form.random_effects:
        variances['region'] = math.exp(tau_v) if objective.use_v else 0.0
        region_effects = objective.v.copy() if objective.use_v else np.zeros(dataset.R)

    status = FitStatus.CONVERGED if converged else FitStatus.NOT_CONVERGED
    message = '' if converged else f'外层优化未收敛: {outcome.message}'
    if np.max(np.abs(beta)) > options.separation_bound:
        status = FitStatus.SEPARATION
        message = f'系数发散 (|b| > {options.separation_bound})'

    return FitResult(
        form=form,
        status=status,
        fixed_effects=fixed,
        variance_components=variances,
        hospital_effects=hospital_effects,
        region_effects=region_effects,
        hospital_volume=dataset.hospitals.volume,
        region_covariate=dataset.regions.w,
        loglik=value,
        iterations=iterations,
        gradient_norm=gradient_norm,
        dropped=objective.dropped,
        trace=tuple(trace),
        message=message,
    )


def _as_boundary(result: FitResult, form: ModelForm, dataset: Dataset) -> FitResult:
    """把降维拟合改写成原模型形式的边界拟合：缺失分量方差为 0、众数为 0"""
    variances = {name: float(result.variance_components.get(name, 0.0)) for name in form.random_effects}
    hospital_effects = region_effects = None
    if 'hospital' in form.random_effects:
        hospital_effects = result.hospital_effects if result.hospital_effects is not None else np.zeros(dataset.H)
    if 'region' in form.random_effects:
        region_effects = result.region_effects if result.region_effects is not None else np.zeros(dataset.R)
    status = FitStatus.BOUNDARY if result.status == FitStatus.CONVERGED else result.status
    return FitResult(
        form=form,
        status=status,
        fixed_effects=dict(result.fixed_effects),
        variance_components=variances,
        hospital_effects=hospital_effects,
        region_effects=region_effects,
        hospital_volume=result.hospital_volume,
        region_covariate=result.region_covariate,
        loglik=result.loglik,
        iterations=result.iterations,
        gradient_norm=result.gradient_norm,
        dropped=result.dropped,
        trace=result.trace,
        message=result.message or '方差分量位于边界 0',
    )


def fit_glmm(dataset: Dataset, spec: Union[ModelSpec, ModelForm, str],
             options: Optional[FitOptions] = None) -> FitResult:
    """拟合随机效应模型（RI_HOSPITAL、MQI_FULL、MQI_NOREGION）

    方差分量小于 boundary_probe 时去掉该分量重新拟合；若对数似然不降低（或方差
    小于 boundary_threshold），报告为边界拟合。
    """
    form = _as_form(spec)
    if not form.random_effects:
        raise ValueError(f"{form.value} 不是随机效应模型，请使用 fit_glm")
    options = options or default_options()

    result = _fit_components(dataset, form, form.random_effects, options)
    if result.status == FitStatus.SEPARATION:
        logger.warning(f"{form.value} 拟合失败 ({result.status.value}) 数据集 {dataset.seed}: {result.message}")
        return result

    # 未收敛的拟合同样检查趋于 0 的方差分量
    small = [name for name in form.random_effects if result.variance_components[name] < options.boundary_probe]
    if small:
        kept = tuple(name for name in form.random_effects if name not in small)
        reduced = _fit_components(dataset, form, kept, options)
        tolerance = options.relative_tolerance * max(1.0, abs(result.loglik))
        forced = any(result.variance_components[name] < options.boundary_threshold for name in small)
        if reduced.status == FitStatus.CONVERGED and (forced or reduced.loglik >= result.loglik - tolerance):
            logger.debug(f"{form.value} 方差分量 {small} 位于边界")
            result = _as_boundary(reduced, form, dataset)

    if not result.usable:
        logger.warning(f"{form.value} 拟合失败 ({result.status.value}) 数据集 {dataset.seed}: {result.message}")
    logger.debug(f"{form.value} 拟合: {result.summary()}")
    return result


def fit_model(dataset: Dataset, spec: Union[ModelSpec, ModelForm, str],
              options: Optional[FitOptions] = None) -> FitResult:
    """按模型形式分派到 fit_glm 或 fit_glmm"""
    form = _as_form(spec)
    if form.random_effects:
        return fit_glmm(dataset, form, options)
    return fit_glm(dataset, form, options)


# ---------------------------------------------------------------------------
# 预测
# ---------------------------------------------------------------------------

def hospital_terms(fit: FitResult) -> np.ndarray:
    """每个医院的估计医院项（MQI: γ̂·n^h + û^h；RI: â^h - â̄）"""
    if fit.hospital_effects is None:
        raise PredictionError(f"{fit.form.value} 拟合没有医院效应")
    terms = np.array(fit.hospital_effects, dtype=np.float64)
    if 'n_h' in fit.form.covariates:
        terms = terms + fit.coefficient('n_h') * np.asarray(fit.hospital_volume, dtype=np.float64)
    return terms


def region_terms(fit: FitResult) -> np.ndarray:
    """每个区域的估计区域项 δ̂·w_r + v̂_r"""
    if fit.region_effects is None:
        raise PredictionError(f"{fit.form.value} 拟合没有区域效应")
    terms = np.array(fit.region_effects, dtype=np.float64)
    if 'w' in fit.form.covariates:
        terms = terms + fit.coefficient('w') * np.asarray(fit.region_covariate, dtype=np.float64)
    return terms


def predict_probability(fit: FitResult, x, hospital: Optional[int] = None,
                        region: Optional[int] = None):
    """预测结局概率 logit⁻¹(截距 + β̂x [+ 医院项] [+ 区域项])

    只有显式给出 hospital / region 时才加入对应效应。

    Raises:
        PredictionError: 医院/区域编号不存在，或拟合不含该效应
    """
    linear = fit.coefficient('intercept') + fit.coefficient('x') * np.asarray(x, dtype=np.float64)

    if hospital is not None:
        terms = hospital_terms(fit)
        if not 0 <= int(hospital) < terms.shape[0]:
            raise PredictionError(f"未知的医院编号: {hospital}")
        linear = linear + terms[int(hospital)]

    if region is not None:
        terms = region_terms(fit)
        if not 0 <= int(region) < terms.shape[0]:
            raise PredictionError(f"未知的区域编号: {region}")
        linear = linear + terms[int(region)]

    probability = expit(linear)
    return float(probability) if np.ndim(probability) == 0 else probability
