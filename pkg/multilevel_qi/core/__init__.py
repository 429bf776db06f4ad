"""
核心计算：场景、数据生成、估计、指标、评价与实验调度
"""
