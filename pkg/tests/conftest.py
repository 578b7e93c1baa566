import pytest

from apnsim import gallery


@pytest.fixture(scope="session")
def models():
    """All bundled models by name."""
    return {name: gallery.load(name) for name in gallery.names()}


@pytest.fixture
def say(capsys):
    """Print a line straight to the terminal, bypassing capture."""
    def emit(line):
        with capsys.disabled():
            print(line)
    return emit
