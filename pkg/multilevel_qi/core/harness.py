"""
实验调度 - 展开扫描网格、并行执行重复、写检查点并汇总

每次重复只由 (主种子, 点序号, 重复序号) 决定，因此结果与执行顺序和进程数无关。
"""

import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass
from typing import Any, Dict, List, Mapping, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import ValidationError
from tqdm import tqdm

from multilevel_qi.core.dgp import dump_datasets, generate_dataset
from multilevel_qi.core.evaluation import aggregate, missing_metrics, score_replication
from multilevel_qi.core.glmm import default_options, fit_model
from multilevel_qi.core.indicators import compute_all
from multilevel_qi.core.scenario import (
    SWEEP_GRIDS,
    ConfigError,
    ScenarioError,
    read_yaml,
    scenario_from_mapping,
    validate_scenario,
)
from multilevel_qi.core.storage import RunStorage
from multilevel_qi.core.streams import format_stream_key, stream_key
from multilevel_qi.models.dataset import Dataset
from multilevel_qi.models.experiment import (
    ExperimentPlan,
    LedgerEntry,
    MetricRecord,
    ReplicationMetrics,
    ReplicationStatus,
    RunLedger,
    ScenarioPoint,
)
from multilevel_qi.models.fit import FitOptions, FitResult, FitStatus, ModelForm
from multilevel_qi.models.indicators import HospitalIndicators, RegionIndicators
from multilevel_qi.models.scenario import SCENARIO_KEYS, Scenario, SweepSpec
from multilevel_qi.settings import settings
from multilevel_qi.utils.logger import get_logger

logger = get_logger(__name__)

EXPERIMENT_KEYS = ('replications', 'seed', 'workers', 'checkpoint_every')


# ---------------------------------------------------------------------------
# 计划
# ---------------------------------------------------------------------------

def load_plan(path: str, overrides: Optional[Mapping[str, Any]] = None) -> ExperimentPlan:
    """从YAML文件读取实验计划

    文件顶层是场景参数，另有可选的 sweep 段和 experiment 段；
    overrides 中非 None 的 replications / seed / workers 覆盖文件中的值。

    Raises:
        ConfigError: 文件缺失、未知键、未知扫描参数
        ScenarioError: 基线场景或扫描取值越界
    """
    data = read_yaml(path)
    sweep_data = data.pop('sweep', None)
    experiment = data.pop('experiment', None) or {}
    base = scenario_from_mapping(data)

    if not isinstance(experiment, dict):
        raise ConfigError("experiment 段必须是键值映射")
    unknown = [key for key in experiment if key not in EXPERIMENT_KEYS]
    if unknown:
        raise ConfigError(f"experiment 段中的未知键: {', '.join(map(str, unknown))}")

    sweep_parameter = None
    sweep_values: List[float] = []
    if sweep_data:
        try:
            sweep = SweepSpec(**sweep_data)
        except (TypeError, ValidationError) as e:
            raise ConfigError(f"sweep 段不合法: {e}") from e
        sweep_parameter = sweep.parameter
        if sweep.values is not None:
            sweep_values = list(sweep.values)
        elif sweep.parameter in SWEEP_GRIDS:
            sweep_values = list(SWEEP_GRIDS[sweep.parameter])
        else:
            raise ConfigError(f"扫描参数 {sweep.parameter} 没有内置网格，必须给出 values")

    harness = settings.section('harness')
    merged = {
        'replications': harness.get('replications', 1000),
        'seed': harness.get('master_seed', 20220901),
        'workers': harness.get('workers', 1),
        'checkpoint_every': harness.get('checkpoint_every', 50),
    }
    merged.update(experiment)
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})

    plan = ExperimentPlan(
        base=base,
        sweep_parameter=sweep_parameter,
        sweep_values=sweep_values,
        replications=int(merged['replications']),
        master_seed=int(merged['seed']),
        workers=int(merged['workers']),
        checkpoint_every=int(merged['checkpoint_every']),
    )
    validate_plan(plan)
    return plan


def validate_plan(plan: ExperimentPlan) -> ExperimentPlan:
    """校验计划；扫描取值在计划阶段就拒绝"""
    if plan.replications < 1:
        raise ScenarioError(f"replications 必须 >= 1，当前为 {plan.replications}")
    if plan.workers < 1:
        raise ScenarioError(f"workers 必须 >= 1，当前为 {plan.workers}")
    if plan.checkpoint_every < 1:
        raise ScenarioError(f"checkpoint_every 必须 >= 1，当前为 {plan.checkpoint_every}")
    validate_scenario(plan.base)
    if plan.sweep_parameter is not None:
        if plan.sweep_parameter not in SCENARIO_KEYS:
            raise ConfigError(f"未知的扫描参数: {plan.sweep_parameter}")
        for value in plan.sweep_values:
            try:
                scenario = plan.base.with_value(plan.sweep_parameter, value)
            except ValidationError as e:
                raise ConfigError(f"扫描取值 {plan.sweep_parameter}={value} 类型错误") from e
            try:
                validate_scenario(scenario)
            except ScenarioError as e:
                raise ScenarioError(f"扫描取值 {plan.sweep_parameter}={value} 不合法: {e}") from e
    return plan


def expand_plan(plan: ExperimentPlan) -> List[ScenarioPoint]:
    """每个扫描取值一个场景点，其余参数保持基线；没有扫描时只有基线一个点"""
    validate_plan(plan)
    if plan.sweep_parameter is None or not plan.sweep_values:
        points = [ScenarioPoint(index=0, scenario=plan.base)]
    else:
        points = [
            ScenarioPoint(
                index=i,
                scenario=plan.base.with_value(plan.sweep_parameter, value),
                parameter=plan.sweep_parameter,
                value=float(value),
            )
            for i, value in enumerate(plan.sweep_values)
        ]
    logger.info(f"实验计划展开为 {len(points)} 个场景点 × {plan.replications} 次重复")
    return points


# ---------------------------------------------------------------------------
# 单次重复
# ---------------------------------------------------------------------------

def _failed_fit(form: ModelForm, dataset: Dataset, error: Exception) -> FitResult:
    return FitResult(
        form=form,
        status=FitStatus.NOT_CONVERGED,
        fixed_effects={},
        hospital_volume=dataset.hospitals.volume,
        region_covariate=dataset.regions.w,
        message=f'{type(error).__name__}: {error}',
    )


def fit_all(dataset: Dataset, options: Optional[FitOptions] = None) -> Dict[ModelForm, FitResult]:
    """在同一数据集上拟合四种模型形式；数值异常转为未收敛状态"""
    options = options or default_options()
    fits = {}
    for form in ModelForm:
        try:
            fits[form] = fit_model(dataset, form, options)
        except (ArithmeticError, np.linalg.LinAlgError, ValueError) as e:
            logger.warning(f"{form.value} 拟合出错，数据集 {dataset.seed}: {e}")
            fits[form] = _failed_fit(form, dataset, e)
        logger.debug(f"{form.value}: {fits[form].summary()}")
    return fits


@dataclass(frozen=True)
class ReplicationOutcome:
    """一次重复的完整结果"""
    dataset: Dataset
    fits: Dict[ModelForm, FitResult]
    hospitals: HospitalIndicators
    regions: RegionIndicators
    metrics: ReplicationMetrics


def simulate_replication(scenario: Scenario, seed: int, point: Optional[ScenarioPoint] = None,
                         replication: int = 0, options: Optional[FitOptions] = None,
                         tail_share: Optional[float] = None) -> ReplicationOutcome:
    """生成数据、拟合四种模型、计算指标并打分"""
    point = point or ScenarioPoint(index=0, scenario=scenario)
    if tail_share is None:
        tail_share = float(settings.get('evaluation.tail_share', 0.1))
    dataset = generate_dataset(scenario, seed, point.index, replication)
    fits = fit_all(dataset, options)
    hospitals, regions = compute_all(dataset, fits)
    metrics = score_replication(dataset, hospitals, regions, fits, point, replication, tail_share)
    return ReplicationOutcome(dataset=dataset, fits=fits, hospitals=hospitals, regions=regions, metrics=metrics)


def run_replication(scenario: Scenario, seed: int, point: Optional[ScenarioPoint] = None,
                    replication: int = 0, options: Optional[FitOptions] = None,
                    tail_share: Optional[float] = None
                    ) -> Tuple[HospitalIndicators, RegionIndicators, ReplicationMetrics]:
    """执行一次重复，返回 (医院指标, 区域指标, 评价指标)"""
    outcome = simulate_replication(scenario, seed, point, replication, options, tail_share)
    return outcome.hospitals, outcome.regions, outcome.metrics


def _replication_task(point: ScenarioPoint, replication: int, master_seed: int, options: FitOptions,
                      tail_share: float, keep_indicators: bool) -> Dict[str, Any]:
    """工作进程执行的单元；任何异常都记为失败重复而不中断实验"""
    started = time.perf_counter()
    seed = format_stream_key(stream_key(master_seed, point.index, replication))
    entry = LedgerEntry(
        point=point.index,
        replication=replication,
        scenario_param=point.label,
        param_value=point.value,
        seed=seed,
    )
    indicators = None
    try:
        outcome = simulate_replication(point.scenario, master_seed, point, replication, options, tail_share)
        metrics = outcome.metrics
        entry.fit_status = {form.value: fit.status.value for form, fit in outcome.fits.items()}
        entry.status = ReplicationStatus.PARTIAL if metrics.failed_fits else ReplicationStatus.COMPLETED
        entry.decile_ties = metrics.decile_ties
        if keep_indicators:
            indicators = (outcome.hospitals, outcome.regions)
    except Exception as e:
        logger.error(f"重复 {seed} 失败: {e}")
        metrics = missing_metrics(point, replication)
        entry.status = ReplicationStatus.FAILED
        entry.error_message = f'{type(e).__name__}: {e}'
    entry.wall_time = time.perf_counter() - started
    return {'records': metrics.records, 'entry': entry, 'indicators': indicators}


# ---------------------------------------------------------------------------
# 实验
# ---------------------------------------------------------------------------

class ExperimentRunner:
    """实验执行器：调度全部 (点, 重复)，定期写检查点，最后汇总"""

    def __init__(self, plan: ExperimentPlan, storage: Optional[RunStorage] = None,
                 options: Optional[FitOptions] = None, tail_share: Optional[float] = None,
                 dump_datasets: bool = False, dump_indicators: bool = False, progress: bool = False):
        self.plan = validate_plan(plan)
        self.storage = storage
        self.options = options or default_options()
        self.tail_share = float(settings.get('evaluation.tail_share', 0.1)) if tail_share is None else tail_share
        self.dump_datasets = dump_datasets
        self.dump_indicators = dump_indicators
        self.progress = progress
        self.logger = get_logger(__name__)

        self.records: List[MetricRecord] = []
        self.ledger = RunLedger()

    def _collect(self, result: Dict[str, Any]) -> None:
        entry: LedgerEntry = result['entry']
        self.records.extend(result['records'])
        self.ledger.add(entry)
        if result['indicators'] is not None and self.storage is not None:
            hospitals, regions = result['indicators']
            self.storage.save_indicators(entry.point, entry.replication, hospitals, regions)

    def _checkpoint(self) -> None:
        if self.storage is not None:
            self.storage.save_checkpoint(self._sorted_records(), self.ledger)

    def _sorted_records(self) -> List[MetricRecord]:
        return sorted(self.records, key=lambda r: (r.point, r.replication))

    def run(self, resume: bool = False) -> Tuple[pd.DataFrame, RunLedger]:
        """执行实验

        Args:
            resume: 为 True 时读取运行目录中的检查点，只执行缺失的重复

        Returns:
            (汇总表, 运行台账)
        """
        points = expand_plan(self.plan)
        if self.storage is not None:
            self.storage.save_plan(self.plan)

        if resume and self.storage is not None:
            records, ledger = self.storage.load_checkpoint()
            done = ledger.completed_keys()
            self.records = [r for r in records if (r.point, r.replication) in done]
            self.ledger = ledger

        done = self.ledger.completed_keys()
        pending = [(point, r) for point in points for r in range(self.plan.replications)
                   if (point.index, r) not in done]
        self.logger.info(f"待执行 {len(pending)} 次重复（已完成 {len(done)} 次），进程数 {self.plan.workers}")

        keep = self.dump_indicators and self.storage is not None
        bar = tqdm(total=len(pending), desc='replications', disable=not self.progress)
        since_checkpoint = 0
        try:
            if self.plan.workers == 1:
                for point, r in pending:
                    self._collect(_replication_task(point, r, self.plan.master_seed, self.options,
                                                    self.tail_share, keep))
                    bar.update(1)
                    since_checkpoint += 1
                    if since_checkpoint >= self.plan.checkpoint_every:
                        self._checkpoint()
                        since_checkpoint = 0
            else:
                with ProcessPoolExecutor(max_workers=self.plan.workers) as executor:
                    futures = [
                        executor.submit(_replication_task, point, r, self.plan.master_seed, self.options,
                                        self.tail_share, keep)
                        for point, r in pending
                    ]
                    for future in as_completed(futures):
                        self._collect(future.result())
                        bar.update(1)
                        since_checkpoint += 1
                        if since_checkpoint >= self.plan.checkpoint_every:
                            self._checkpoint()
                            since_checkpoint = 0
        finally:
            bar.close()
            self._checkpoint()

        failures = self.ledger.failure_count()
        if failures:
            self.logger.info(f"{failures} 次重复存在失败的拟合")

        summary = aggregate(self._sorted_records())
        if self.storage is not None:
            self.ledger.summary_path = self.storage.save_summary(summary)
            if self.dump_datasets:
                self._dump_datasets(points)
            self.logger.info(f"汇总表已写入 {self.ledger.summary_path}")
        return summary, self.ledger

    def _dump_datasets(self, points: List[ScenarioPoint]) -> None:
        """按种子流重新生成并转储每个点的全部数据集"""
        for point in points:
            datasets = (generate_dataset(point.scenario, self.plan.master_seed, point.index, r)
                        for r in range(self.plan.replications))
            dump_datasets(datasets, self.storage.dataset_path(point.index))


def run_experiment(plan: ExperimentPlan, output_dir: Optional[str] = None,
                   storage: Optional[RunStorage] = None, resume: bool = False,
                   **kwargs) -> Tuple[pd.DataFrame, RunLedger]:
    """执行实验计划；给出 output_dir 时在其中新建运行目录"""
    if storage is None and output_dir is not None:
        storage = RunStorage.create(output_dir, plan.master_seed)
    return ExperimentRunner(plan, storage=storage, **kwargs).run(resume=resume)
