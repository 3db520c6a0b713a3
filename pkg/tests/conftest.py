import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from alignlite import _kernels


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    # JIT compilation must not eat into timed acceptance budgets
    _kernels.warmup()
