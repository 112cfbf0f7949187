import pytest

from ledstore import create_pool

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def pool_path(tmp_path):
    return str(tmp_path / "test.pool")


@pytest.fixture
def pool(pool_path):
    handle = create_pool(pool_path, "test-layout", 8 * 1024 * 1024)
    yield handle
    if not handle.closed:
        handle.close()


@pytest.fixture
def acceptance_log():
    def record(line: str) -> None:
        ACCEPTANCE_LINES.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
