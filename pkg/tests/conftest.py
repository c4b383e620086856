import json

import pytest

from adfolio.model import AdSpec, MarketProblem, PosteriorSummary, PriceType

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def small_market():
    ads = [AdSpec("a", 1.0, PriceType.CPC), AdSpec("b", 10.0, PriceType.CPA)]
    posts = [PosteriorSummary.from_moments(0.001, 1e-8), PosteriorSummary.from_moments(0.0001, 1e-9)]
    return MarketProblem(ads, 1000, posts)


@pytest.fixture
def write_json(tmp_path):
    def _write(name, data):
        path = tmp_path / name
        path.write_text(json.dumps(data))
        return path

    return _write
