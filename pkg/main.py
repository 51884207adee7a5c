"""
几何套利分析工具
支持情景载入、路径模拟、曲率与零曲率检验、联络拉普拉斯谱分析、定价核提取和效用最大化
"""
import os
import sys
import logging
from importlib import metadata

sys.path.append(os.path.join(os.path.dirname(__file__)))

from gauge_arb.config import LOG_FILENAME


def check_requirements():
    """检查 requirements.txt 中的依赖，缺失时给出安装提示"""
    req_path = os.path.join(os.path.dirname(__file__), "requirements.txt")
    if not os.path.exists(req_path):
        return True

    with open(req_path, "r", encoding="utf-8") as f:
        requirements = [line.strip() for line in f if line.strip() and not line.startswith("#")]
    missing = []
    for requirement in requirements:
        name = requirement.split(">=")[0].split("==")[0].strip()
        try:
            metadata.version(name)
        except metadata.PackageNotFoundError:
            missing.append(name)
    if missing:
        print(f"检测到缺少依赖：{', '.join(missing)}")
        print("请运行：pip install -r requirements.txt")
        return False
    return True


# 配置日志
logging.basicConfig(
    level=logging.ERROR,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    handlers=[
        logging.FileHandler(LOG_FILENAME),
        logging.StreamHandler()
    ]
)
logger = logging.getLogger(__name__)


def main():
    """程序入口点"""
    if not check_requirements():
        return 2
    from gauge_arb.cli import main as cli_main
    return cli_main(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
