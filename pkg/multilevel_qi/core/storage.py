"""
存储模块 - 运行目录中的计划、台账、逐次指标、汇总表与可选转储
"""

import os
from datetime import datetime
from typing import List, Optional, Tuple

import pandas as pd
import yaml

from multilevel_qi.core.scenario import ConfigError
from multilevel_qi.models.experiment import (
    ExperimentPlan,
    MetricRecord,
    RunLedger,
    records_frame,
    records_from_frame,
)
from multilevel_qi.models.indicators import HospitalIndicators, RegionIndicators
from multilevel_qi.utils.logger import get_logger

# 汇总表的浮点格式（6 位有效数字）
SUMMARY_FLOAT_FORMAT = '%.6g'
# 检查点保留全部精度，保证续跑后汇总一致
CHECKPOINT_FLOAT_FORMAT = '%.17g'


def run_directory_name(master_seed: int, now: Optional[datetime] = None) -> str:
    """运行目录名：时间戳 + 主种子"""
    now = now or datetime.now()
    return f"{now.strftime('%Y%m%d_%H%M%S')}_seed{master_seed}"


def write_summary(frame: pd.DataFrame, filepath: str) -> str:
    """按固定精度写汇总表"""
    directory = os.path.dirname(filepath)
    if directory:
        os.makedirs(directory, exist_ok=True)
    frame.to_csv(filepath, index=False, float_format=SUMMARY_FLOAT_FORMAT, na_rep='')
    return filepath


def read_summary(filepath: str) -> pd.DataFrame:
    """读取汇总表"""
    if not os.path.exists(filepath):
        raise ConfigError(f"汇总表不存在: {filepath}")
    return pd.read_csv(filepath, keep_default_na=True)


class RunStorage:
    """一次实验的运行目录

    目录结构:
        plan.yaml     实验计划
        ledger.csv    运行台账（每个 (点, 重复) 一行）
        metrics.csv   逐次评价记录（检查点）
        summary.csv   汇总表
        indicators/   可选的逐次指标转储
        datasets/     可选的数据集转储
    """

    PLAN_FILE = 'plan.yaml'
    LEDGER_FILE = 'ledger.csv'
    METRICS_FILE = 'metrics.csv'
    SUMMARY_FILE = 'summary.csv'

    def __init__(self, path: str):
        """
        Args:
            path: 运行目录路径，不存在时创建
        """
        self.path = path
        self.logger = get_logger(__name__)
        try:
            os.makedirs(self.path, exist_ok=True)
        except OSError as e:
            raise ConfigError(f"无法创建输出目录 {self.path}: {e}") from e
        if not os.access(self.path, os.W_OK):
            raise ConfigError(f"输出目录不可写: {self.path}")
        self.logger.debug(f"初始化运行目录: {self.path}")

    @classmethod
    def create(cls, output_dir: str, master_seed: int, now: Optional[datetime] = None) -> 'RunStorage':
        """在 output_dir 下新建以时间戳和主种子命名的运行目录

        同名目录已存在时依次追加 _1、_2 … 后缀，不复用已有目录。
        """
        name = run_directory_name(master_seed, now)
        try:
            os.makedirs(output_dir, exist_ok=True)
        except OSError as e:
            raise ConfigError(f"无法创建输出目录 {output_dir}: {e}") from e
        path = os.path.join(output_dir, name)
        suffix = 0
        while True:
            try:
                os.mkdir(path)
                break
            except FileExistsError:
                suffix += 1
                path = os.path.join(output_dir, f"{name}_{suffix}")
            except OSError as e:
                raise ConfigError(f"无法创建输出目录 {path}: {e}") from e
        return cls(path)

    def _file(self, name: str) -> str:
        return os.path.join(self.path, name)

    @property
    def summary_path(self) -> str:
        return self._file(self.SUMMARY_FILE)

    def save_plan(self, plan: ExperimentPlan) -> str:
        filepath = self._file(self.PLAN_FILE)
        with open(filepath, 'w', encoding='utf-8') as f:
            yaml.safe_dump(plan.to_dict(), f, allow_unicode=True, sort_keys=False)
        return filepath

    def load_plan(self) -> ExperimentPlan:
        filepath = self._file(self.PLAN_FILE)
        if not os.path.exists(filepath):
            raise ConfigError(f"运行目录中没有实验计划: {filepath}")
        with open(filepath, 'r', encoding='utf-8') as f:
            return ExperimentPlan.from_dict(yaml.safe_load(f))

    def save_checkpoint(self, records: List[MetricRecord], ledger: RunLedger) -> None:
        """写检查点：全部逐次评价记录与台账"""
        records_frame(records).to_csv(self._file(self.METRICS_FILE), index=False,
                                      float_format=CHECKPOINT_FLOAT_FORMAT)
        ledger.to_frame().to_csv(self._file(self.LEDGER_FILE), index=False,
                                 float_format=CHECKPOINT_FLOAT_FORMAT)
        self.logger.info(f"检查点已写入: {len(ledger)} 次重复")

    def load_checkpoint(self) -> Tuple[List[MetricRecord], RunLedger]:
        """读取检查点；不存在时返回空结果"""
        metrics_path = self._file(self.METRICS_FILE)
        ledger_path = self._file(self.LEDGER_FILE)
        if not (os.path.exists(metrics_path) and os.path.exists(ledger_path)):
            return [], RunLedger()
        records = records_from_frame(pd.read_csv(metrics_path))
        ledger = RunLedger.from_frame(pd.read_csv(ledger_path, keep_default_na=False,
                                                  na_values={'param_value': ['']}))
        self.logger.info(f"读取检查点: {len(ledger)} 次重复已完成")
        return records, ledger

    def save_summary(self, frame: pd.DataFrame) -> str:
        return write_summary(frame, self.summary_path)

    def save_indicators(self, point: int, replication: int, hospitals: HospitalIndicators,
                        regions: RegionIndicators) -> None:
        """转储一次重复的医院表与区域表"""
        directory = self._file('indicators')
        os.makedirs(directory, exist_ok=True)
        stem = f'p{point}_r{replication}'
        hospitals.to_frame().to_csv(os.path.join(directory, f'{stem}_hospitals.csv'), index=False)
        regions.to_frame().to_csv(os.path.join(directory, f'{stem}_regions.csv'), index=False)

    def dataset_path(self, point: int) -> str:
        directory = self._file('datasets')
        os.makedirs(directory, exist_ok=True)
        return os.path.join(directory, f'p{point}.csv')
