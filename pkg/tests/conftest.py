import pytest
import torch

from lowshot_re.fixtures import load_corpus
from lowshot_re.model import ChoiceMatcher, vocabulary_for

torch.set_num_threads(1)

# criterion number -> (description, outcome, detail); filled by test_acceptance
CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, text): acceptance criterion checked by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or report.when != "call":
        return
    number, text = mark.args
    detail = item.funcargs.get("detail")
    CRITERIA[number] = (text, "PASS" if report.passed else "FAIL", ", ".join(detail or []))


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        text, verdict, detail = CRITERIA[number]
        line = f"criterion {number}: {verdict}  {text}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))


@pytest.fixture
def detail():
    """Measured values an acceptance test wants echoed in the summary."""
    return []


@pytest.fixture(scope="session")
def corpus():
    return load_corpus()


@pytest.fixture(scope="session")
def vocab(corpus):
    return vocabulary_for(corpus.instances, corpus.relations.values())


@pytest.fixture
def small_model(vocab):
    return ChoiceMatcher.create(vocab, hidden_dim=16, layers=1, heads=2, ffn_dim=16, dropout=0.0)
