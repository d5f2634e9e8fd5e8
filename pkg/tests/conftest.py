import os

import pytest


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long empirical runs, enabled with LMS2S_SLOW=1")


def pytest_collection_modifyitems(config, items):
    if os.environ.get("LMS2S_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="set LMS2S_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)
