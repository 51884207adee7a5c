"""
配置模块 - 包含应用程序的常量定义和数值计算默认参数
"""

# 应用信息常量
APP_TITLE = "gauge-arb 几何套利分析工具"
APP_NAME = "gauge-arb"
APP_VERSION = "1.0.0-release"

# 市场模型相关常量
DEFLATOR_FLOOR_RELATIVE = 1e-8      # |D^x_t| 低于 1e-8 * max_j |D^j_t| 视为奇异
DEFAULT_PORTFOLIO_BOUNDS = (0.5, 1.5)
DEFAULT_MATURITY_OFFSETS = tuple(round(0.25 * k, 10) for k in range(41))  # 0..10 年

# 规范变换相关常量
TRANSFORM_FLOOR = 1e-12
GAUSS_LEGENDRE_NODES = 8
BREAKPOINT_DECIMALS = 12

# 模拟相关常量
EXPLOSION_BOUND = 1e12

# Nelson 导数估计
DEFAULT_BINS = 32
MIN_BIN_COUNT = 50

# 套利检测
ZC_TOL_RELATIVE = 1e-6
RANK_TOL_RELATIVE = 1e-10
VANISHING_VOLATILITY = 1e-10

# 联络拉普拉斯算子
DEFAULT_GRID = 33
MAX_ASSETS_ON_GRID = 3
DEFAULT_EIGENPAIRS = 4
DEFAULT_EIGEN_TOL = 1e-10
EPSILON_KERNEL_FLOOR = 1e-8        # 核判定阈值的下限（舍入误差量级之上）
CALIBRATION_STRIDE = 2             # 校准用粗网格在时间与组合轴上的抽取步长
CALIBRATION_FACTOR = 10.0          # ε = 因子 · 粗网格离散误差 · (h / h_粗)²
NOISE_FACTOR = 10.0                # 随机情景下 ε 不低于 因子 · 收益估计方差的均值
INCONCLUSIVE_FACTOR = 10.0
DENSE_EIGEN_LIMIT = 400            # 节点数不超过此值时直接稠密求解
DENSE_FALLBACK_LIMIT = 5000        # ARPACK 不收敛时允许回退稠密求解的上限
EIGEN_SHIFT = 1e-6                 # 移位求逆的位移取 -EIGEN_SHIFT，避开精确奇异的分解
EIGEN_MAX_ITER = 10000
PSD_TOLERANCE = 1e-10
SIGN_TOLERANCE = 1e-8
RN_SPREAD_TOL = 1e-3
KERNEL_CHECK_NODES = 100

# 效用最大化
UTILITY_MAX_HORIZON = 1.0
UTILITY_FLAT_TOL = 1e-10
UTILITY_MAX_SWEEPS = 50

# 输出文件
REPORT_SUFFIX = "_report.json"
METADATA_SUFFIX = "_metadata.json"
SUMMARY_CSV = "summary.csv"
SUMMARY_JSON = "summary.json"
LOG_FILENAME = "gauge_arb.log"

# 退出码
EXIT_OK = 0
EXIT_CONFIG_ERROR = 2
EXIT_NUMERICAL_ERROR = 3

# 命令行默认值
CURVATURE_TOL = 1e-6
UTILITY_DEFAULT_GRID = 11
DEFAULT_SIMULATION = {"horizon": 1.0, "steps": 50, "paths": 1000}
ENSEMBLE_SPECTRUM_PATHS = 8        # spectrum 子命令对随机模型逐路径分析的路径数
