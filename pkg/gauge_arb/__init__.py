# gauge_arb 包初始化文件
# 几何套利分析：规范、现金流强度、Nelson 导数、曲率与联络拉普拉斯谱

from gauge_arb.config import APP_VERSION

__version__ = APP_VERSION
