import os

from dotenv import load_dotenv

load_dotenv(os.path.join(os.path.dirname(__file__), ".env"))

from dloplan import create_toolkit
from dloplan.cli import cli
from config import BatchConfig, DevConfig, TestConfig


CONFIG_MAP = {
    "dev": DevConfig,
    "development": DevConfig,
    "batch": BatchConfig,
    "test": TestConfig,
}


def _select_config():
    config_name = os.getenv("DLOPLAN_CONFIG", "dev").lower()
    return CONFIG_MAP.get(config_name, DevConfig)


def main():
    cli(obj=create_toolkit(_select_config()))


if __name__ == "__main__":
    main()
