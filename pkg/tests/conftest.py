import pytest

from nsrecon import pipeline


class FullScaleRuns:
    """Reference-scale experiments, each computed at most once per session."""

    def __init__(self):
        self._cache = {}

    def get(self, test_id, delta=0.1, **overrides):
        key = (test_id, delta, tuple(sorted(overrides.items())))
        if key not in self._cache:
            cfg = pipeline.RunConfig().with_overrides(test_id=test_id, delta=delta, **overrides)
            sim = pipeline.simulate(cfg)
            self._cache[key] = pipeline.invert(cfg, sim.trace.values, sim.trace.times, sim.u_true)
        return self._cache[key]


@pytest.fixture(scope="session")
def full_scale():
    return FullScaleRuns()


def pytest_terminal_summary(terminalreporter):
    """One line per acceptance criterion, in criterion order."""
    lines = []
    for key in ("passed", "failed"):
        for rep in terminalreporter.stats.get(key, []):
            if rep.when != "call":
                continue
            for name, val in rep.user_properties:
                if name == "criterion":
                    lines.append((val[0], f"[{'PASS' if rep.passed else 'FAIL'}] criterion {val[0]:>2}: {val[1]}"))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
