"""
multilevel_qi 的设置管理
"""

import copy
import os
from typing import Any, Dict, Optional

import yaml
from dotenv import load_dotenv

from multilevel_qi.utils.logger import get_logger

PROJECT_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

# 从.env文件加载环境变量
dotenv_path = os.path.join(PROJECT_ROOT, '.env')
if os.path.exists(dotenv_path):
    load_dotenv(dotenv_path)

logger = get_logger(__name__)

# 找不到配置文件时使用的默认值
DEFAULTS: Dict[str, Any] = {
    'app': {'name': 'multilevel_qi', 'version': '0.1.0'},
    'logging': {'level': 'INFO', 'file': None},
    'glmm': {
        'max_iterations': 100,
        'relative_tolerance': 1e-10,
        'gradient_tolerance': 1e-8,
        'max_outer_iterations': 200,
        'inner_tolerance': 1e-12,
        'inner_max_iterations': 50,
        'separation_bound': 30.0,
        'boundary_threshold': 1e-10,
        'boundary_probe': 1e-4,
        'initial_variance': 0.25,
    },
    'evaluation': {'tail_share': 0.1},
    'harness': {
        'replications': 1000,
        'master_seed': 20220901,
        'workers': 1,
        'checkpoint_every': 50,
        'output_dir': './runs',
    },
}


def _merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """递归合并两个字典，override 优先"""
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


class Settings:
    """multilevel_qi 的设置类"""

    def __init__(self, config_path: Optional[str] = None):
        """通过加载配置文件和环境变量来初始化设置"""
        self._settings: Dict[str, Any] = copy.deepcopy(DEFAULTS)
        self.config_path = config_path or os.environ.get(
            'MQI_CONFIG', os.path.join(PROJECT_ROOT, 'configs', 'config.yaml')
        )

        self._load_config_file()
        self._override_with_env_vars()

    def _load_config_file(self):
        """从config.yaml文件加载设置"""
        if os.path.exists(self.config_path):
            try:
                with open(self.config_path, 'r', encoding='utf-8') as f:
                    loaded = yaml.safe_load(f) or {}
                self._settings = _merge(self._settings, loaded)
                logger.debug(f"从 {self.config_path} 加载设置")
            except Exception as e:
                logger.error(f"加载配置文件错误: {e}")
        else:
            logger.warning(f"在 {self.config_path} 未找到配置文件，使用默认设置")

    def _override_with_env_vars(self):
        """用环境变量覆盖设置"""
        if 'MQI_WORKERS' in os.environ:
            try:
                self._settings.setdefault('harness', {})['workers'] = int(os.environ['MQI_WORKERS'])
            except ValueError:
                logger.warning(f"无效的MQI_WORKERS值: {os.environ['MQI_WORKERS']}")

        if 'MQI_REPLICATIONS' in os.environ:
            try:
                self._settings.setdefault('harness', {})['replications'] = int(os.environ['MQI_REPLICATIONS'])
            except ValueError:
                logger.warning(f"无效的MQI_REPLICATIONS值: {os.environ['MQI_REPLICATIONS']}")

        # 日志设置
        if 'LOG_LEVEL' in os.environ:
            self._settings.setdefault('logging', {})['level'] = os.environ['LOG_LEVEL']

        if 'LOG_FILE' in os.environ:
            self._settings.setdefault('logging', {})['file'] = os.environ['LOG_FILE']

    def get(self, key: str, default: Any = None) -> Any:
        """获取设置值，支持点表示法访问嵌套键"""
        if '.' in key:
            value: Any = self._settings
            for part in key.split('.'):
                if isinstance(value, dict) and part in value:
                    value = value[part]
                else:
                    return default
            return value

        return self._settings.get(key, default)

    def section(self, key: str) -> Dict[str, Any]:
        """获取一个配置段（返回副本）"""
        value = self.get(key, {})
        return dict(value) if isinstance(value, dict) else {}

    def __getitem__(self, key):
        """使用类似字典的访问方式获取设置"""
        return self.get(key)

    def __repr__(self):
        """设置的字符串表示"""
        return f"Settings({self._settings})"


# 创建全局设置实例
settings = Settings()
