import os
import sys

import pytest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..", "bin", "core")))

for name in ("HETCACHE_CONFIG", "HETCACHE_WORKERS", "HETCACHE_LOG_LEVEL"):
    os.environ.pop(name, None)

from experiments import build_case  # noqa: E402
from settings import DEFAULT_CONFIG, apply_overrides, check_config, load_config  # noqa: E402

TINY = {"U": 4, "S": 1, "F": 6, "W": 2}


@pytest.fixture(scope="session")
def default_cfg():
    return load_config(DEFAULT_CONFIG)


@pytest.fixture(scope="session")
def tiny_cfg(default_cfg):
    return check_config(apply_overrides(default_cfg, TINY))


@pytest.fixture(scope="module")
def tiny_context(tiny_cfg):
    return build_case(tiny_cfg, 0)
