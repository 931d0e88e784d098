import os
import sys
import yaml
import logging
from functools import lru_cache
from pathlib import Path
from typing import List

from pydantic import BaseModel, Field

from hiertest.core.exception import AppException

logger = logging.getLogger(__name__)

CONFIG_PATH = Path(__file__).resolve().parent.parent / "config" / "params.yaml"


def load_params(params_path: str) -> dict:
    """
    Load configuration parameters from a YAML file.

    Args:
        params_path (str): Path to the YAML configuration file.

    Returns:
        dict: Parsed YAML content as a Python dictionary.

    Raises:
        FileNotFoundError: If the YAML file does not exist.
        yaml.YAMLError: If the YAML is malformed.
        AppException: For all other unexpected errors.
    """

    if not os.path.exists(params_path):
        logger.error("Configuration file not found: %s", params_path)
        raise FileNotFoundError(f"Configuration file not found: {params_path}")

    try:
        with open(params_path, "r", encoding="utf-8") as file:
            params = yaml.safe_load(file)
        if not params:
            logger.warning("YAML file %s is empty.", params_path)
        else:
            logger.debug("Parameters retrieved successfully from %s", params_path)
        return params

    except yaml.YAMLError as e:
        logger.error("YAML parsing error in file %s: %s", params_path, e)
        raise

    except Exception as e:
        logger.error("Unexpected error while reading YAML file %s: %s", params_path, e)
        raise AppException(e, sys)


class Tolerances(BaseModel):
    legendre: float = 1e-10
    inverse: float = 1e-12
    inverse_max_iter: int = 200
    holds: float = 1e-12
    cost_equality: float = 1e-9
    closed_form_check: float = 1e-6


class Guards(BaseModel):
    coverings: int = 16
    complete: int = 20
    dp_patterns: int = 8
    brute_force_vine: int = 8


class PsiDefaults(BaseModel):
    lambda_: float = Field(1.0, alias="lambda")
    mu: float = 8.0


class ScanDefaults(BaseModel):
    a: float = 1.0
    b: List[float] = Field(default_factory=lambda: [0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0])
    x_max: float = 10.0
    y_max: float = 10.0
    points: int = 200


class Settings(BaseModel):
    """Packaged runtime settings; per-module blocks stay available through `module`."""

    tolerances: Tolerances = Field(default_factory=Tolerances)
    guards: Guards = Field(default_factory=Guards)
    psi_defaults: PsiDefaults = Field(default_factory=PsiDefaults)
    scan: ScanDefaults = Field(default_factory=ScanDefaults)
    raw: dict = Field(default_factory=dict)

    def module(self, name: str) -> dict:
        return self.raw.get(name, {}) or {}

    def log_file(self, name: str) -> str:
        return self.module(name).get("file_path", f"{name}.log")


@lru_cache(maxsize=None)
def get_settings() -> Settings:
    params = load_params(str(CONFIG_PATH)) or {}
    return Settings(
        tolerances=Tolerances(**params.get("tolerances", {})),
        guards=Guards(**params.get("guards", {})),
        psi_defaults=PsiDefaults(**params.get("psi_defaults", {})),
        scan=ScanDefaults(**params.get("scan", {})),
        raw=params,
    )
