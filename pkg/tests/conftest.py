import os
import sys
from pathlib import Path

import pytest

PROJECT_ROOT = Path(__file__).resolve().parents[1]
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from respiratory_sed import config  # noqa: E402


@pytest.fixture(autouse=True)
def _isolated_settings(tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> None:
    """Keep a developer's data/config.json and RESP_SED_* variables out of the tests."""
    monkeypatch.setattr(config, "CONFIG_FILE", str(tmp_path / "absent_config.json"))
    monkeypatch.setattr(config, "_settings_cache", None)
    for name in [key for key in list(os.environ) if key.startswith(config.ENV_PREFIX)]:
        if name != "RESP_SED_RUN_SLOW":
            monkeypatch.delenv(name)
