import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from tomofuse.synth import LesionSpec, SynthSpec, synth_generate

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

SMALL_SPEC = SynthSpec(n_negative=16, n_positive=8, depth_range=(3, 6), slice_size=(32, 32),
                       lesion=LesionSpec(radius_range=(3.0, 5.0), contrast=0.6, span=2),
                       clutter_count=(5, 10), seed=11)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("small")
    entries = synth_generate(SMALL_SPEC, root)
    return root, entries


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def criterion(request):
    """Record one acceptance line; it is echoed in the terminal summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def report(name: str, passed: bool, detail: str):
        line = f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}"
        print(line)
        lines.append(line)
        return passed

    return report


_ACCEPTANCE = pytest.StashKey[list]()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("C", 1)[1].split(" ", 1)[0])):
            terminalreporter.write_line(line)
