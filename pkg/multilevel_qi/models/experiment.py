"""
实验模型 - 实验计划、场景点、运行台账与逐次重复的评价指标
"""

import math
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from enum import Enum
from typing import Any, Dict, Iterable, List, Optional, Set, Tuple

import pandas as pd

from multilevel_qi.models.fit import ModelForm
from multilevel_qi.models.scenario import Scenario

BASELINE_LABEL = 'baseline'

LEDGER_COLUMNS = (
    'point', 'replication', 'scenario_param', 'param_value', 'seed', 'status',
    *(f'fit_{form.value}' for form in ModelForm), 'decile_ties', 'wall_time', 'error_message',
)
METRIC_COLUMNS = ('point', 'replication', 'scenario_param', 'param_value', 'indicator', 'level', 'metric', 'value')


class ReplicationStatus(str, Enum):
    """重复状态枚举"""
    PENDING = "pending"        # 等待中
    COMPLETED = "completed"    # 全部拟合可用
    PARTIAL = "partial"        # 部分拟合失败，依赖的指标缺失
    FAILED = "failed"          # 重复本身出错


@dataclass(frozen=True)
class ScenarioPoint:
    """扫描轴上的一个场景点"""
    index: int  # 点序号，参与种子流
    scenario: Scenario
    parameter: Optional[str] = None  # 扫描参数；None 表示只有基线
    value: Optional[float] = None

    @property
    def label(self) -> str:
        return self.parameter or BASELINE_LABEL

    def to_dict(self) -> Dict[str, Any]:
        return {
            'index': self.index,
            'parameter': self.parameter,
            'value': self.value,
            'scenario': self.scenario.to_dict(),
        }


@dataclass
class ExperimentPlan:
    """实验计划数据类"""
    base: Scenario  # 基线场景
    sweep_parameter: Optional[str] = None  # 扫描参数名
    sweep_values: List[float] = field(default_factory=list)  # 扫描取值
    replications: int = 1000  # 每个点的重复次数
    master_seed: int = 20220901  # 主种子
    workers: int = 1  # 并行进程数
    checkpoint_every: int = 50  # 每完成多少次重复写一次检查点

    def to_dict(self) -> Dict[str, Any]:
        """转换为字典格式"""
        result = asdict(self)
        result['base'] = self.base.to_dict()
        return result

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ExperimentPlan':
        """从字典创建实例"""
        data = dict(data)
        if isinstance(data.get('base'), dict):
            data['base'] = Scenario(**data['base'])
        return cls(**data)


@dataclass
class LedgerEntry:
    """台账中的一行：一个 (场景点, 重复)"""
    point: int
    replication: int
    scenario_param: str
    param_value: Optional[float]
    seed: str  # 种子流标识 master:point:replication
    status: ReplicationStatus = ReplicationStatus.PENDING
    fit_status: Dict[str, str] = field(default_factory=dict)  # 模型形式 -> FitStatus 值
    decile_ties: int = 0  # 估计集合边界出现并列的次数
    wall_time: float = 0.0  # 秒
    error_message: Optional[str] = None

    @property
    def key(self) -> Tuple[int, int]:
        return self.point, self.replication

    def to_row(self) -> Dict[str, Any]:
        """展开为平面行"""
        row = {
            'point': self.point,
            'replication': self.replication,
            'scenario_param': self.scenario_param,
            'param_value': self.param_value,
            'seed': self.seed,
            'status': self.status.value,
        }
        for form in ModelForm:
            row[f'fit_{form.value}'] = self.fit_status.get(form.value, '')
        row['decile_ties'] = self.decile_ties
        row['wall_time'] = self.wall_time
        row['error_message'] = self.error_message or ''
        return row

    @classmethod
    def from_row(cls, row: Dict[str, Any]) -> 'LedgerEntry':
        """从平面行创建实例"""
        fit_status = {}
        for form in ModelForm:
            value = row.get(f'fit_{form.value}')
            if isinstance(value, str) and value:
                fit_status[form.value] = value
        param_value = row.get('param_value')
        if param_value is not None and isinstance(param_value, float) and math.isnan(param_value):
            param_value = None
        message = row.get('error_message')
        return cls(
            point=int(row['point']),
            replication=int(row['replication']),
            scenario_param=str(row['scenario_param']),
            param_value=param_value,
            seed=str(row['seed']),
            status=ReplicationStatus(row['status']),
            fit_status=fit_status,
            decile_ties=int(row.get('decile_ties', 0)),
            wall_time=float(row.get('wall_time', 0.0)),
            error_message=message if isinstance(message, str) and message else None,
        )


@dataclass
class RunLedger:
    """运行台账：每个计划中的重复一行"""
    entries: Dict[Tuple[int, int], LedgerEntry] = field(default_factory=dict)
    summary_path: Optional[str] = None
    created_at: datetime = field(default_factory=lambda: datetime.now(timezone.utc))

    def add(self, entry: LedgerEntry) -> None:
        self.entries[entry.key] = entry

    def __len__(self) -> int:
        return len(self.entries)

    def completed_keys(self) -> Set[Tuple[int, int]]:
        """已执行（无论成败）的 (点, 重复)"""
        return {key for key, entry in self.entries.items() if entry.status != ReplicationStatus.PENDING}

    def failure_count(self) -> int:
        return sum(1 for entry in self.entries.values() if entry.status != ReplicationStatus.COMPLETED)

    def to_frame(self) -> pd.DataFrame:
        rows = [self.entries[key].to_row() for key in sorted(self.entries)]
        return pd.DataFrame(rows, columns=list(LEDGER_COLUMNS))

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> 'RunLedger':
        ledger = cls()
        for row in frame.to_dict(orient='records'):
            ledger.add(LedgerEntry.from_row(row))
        return ledger


@dataclass(frozen=True)
class MetricRecord:
    """一次重复中一个指标的一个评价值；缺失为 NaN"""
    point: int
    replication: int
    scenario_param: str
    param_value: Optional[float]
    indicator: str
    level: str  # hospital / region / coefficient
    metric: str  # spearman / best_share / worst_share / estimate / bias
    value: float

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class ReplicationMetrics:
    """一次重复的全部评价指标与拟合失败标记"""
    point: int
    replication: int
    records: List[MetricRecord] = field(default_factory=list)
    failed_fits: List[str] = field(default_factory=list)  # 不可用的模型形式
    decile_ties: int = 0

    def add(self, record: MetricRecord) -> None:
        self.records.append(record)

    def value(self, indicator: str, metric: str) -> float:
        """查找某个指标的某个评价值"""
        for record in self.records:
            if record.indicator == indicator and record.metric == metric:
                return record.value
        raise KeyError(f"没有 {indicator}/{metric} 的记录")

    def to_frame(self) -> pd.DataFrame:
        return records_frame(self.records)


def records_frame(records: Iterable[MetricRecord]) -> pd.DataFrame:
    """把评价记录展开为长表"""
    return pd.DataFrame([record.to_dict() for record in records], columns=list(METRIC_COLUMNS))


def records_from_frame(frame: pd.DataFrame) -> List[MetricRecord]:
    """从长表恢复评价记录"""
    records = []
    for row in frame.to_dict(orient='records'):
        param_value = row['param_value']
        if param_value is not None and isinstance(param_value, float) and math.isnan(param_value):
            param_value = None
        records.append(MetricRecord(
            point=int(row['point']),
            replication=int(row['replication']),
            scenario_param=str(row['scenario_param']),
            param_value=param_value,
            indicator=str(row['indicator']),
            level=str(row['level']),
            metric=str(row['metric']),
            value=float(row['value']),
        ))
    return records
