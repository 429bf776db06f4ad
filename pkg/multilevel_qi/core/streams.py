"""
随机数流 - 基于计数器的可分裂生成器

每次重复的随机数流由 (主种子, 场景点序号, 重复序号) 唯一确定，
与执行顺序和并行度无关。
"""

from typing import Tuple

import numpy as np


def stream_key(master_seed: int, point: int = 0, replication: int = 0) -> Tuple[int, int, int]:
    """随机数流的标识"""
    return int(master_seed), int(point), int(replication)


def format_stream_key(key: Tuple[int, int, int]) -> str:
    """把流标识格式化为字符串（写入台账和数据集）"""
    return '{}:{}:{}'.format(*key)


def replication_rng(master_seed: int, point: int = 0, replication: int = 0) -> np.random.Generator:
    """返回某次重复专用的 Philox 生成器"""
    sequence = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(point), int(replication)))
    return np.random.Generator(np.random.Philox(sequence))
