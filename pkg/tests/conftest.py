import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

ROOT = Path(__file__).resolve().parents[1]
CORA = ROOT / "data" / "cora"


@pytest.fixture(scope="session")
def cora_dir():
    if not (CORA / "cora.content").exists():
        pytest.skip("Cora files not present under data/cora")
    return CORA
