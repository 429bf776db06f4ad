"""
multilevel_qi - 多层质量指标（SHOR / RSHOR / RSPOR）及其蒙特卡罗评价
"""

__version__ = "0.1.0"
