from pathlib import Path

import pytest

DATA = Path(__file__).parent / "data"


@pytest.fixture
def site_filter_text():
    return (DATA / "site_filter.conf").read_text()


@pytest.fixture
def data_dir():
    return DATA
