import pytest

from ramhu.harness import World


@pytest.fixture
def world():
    """Three provisioned users, both servers and an in-process network on a logical clock."""
    return World(seed=11)


@pytest.fixture
def registered(world):
    for i in range(len(world.users)):
        world.register(i)
    world.clock.advance(1)
    return world


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
