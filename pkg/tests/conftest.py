import numpy as np
import pytest

from distortkit.body import build_default_body, default_pose, pose_body, regress_joints
from distortkit.synth import CameraSampleConfig, make_scene

# criterion number -> (passed, detail), filled by tests/test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[num]
        tr.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {num:2d}: {detail}")


@pytest.fixture(scope="session")
def body():
    return build_default_body()


@pytest.fixture(scope="session")
def posed(body):
    verts = pose_body(body, default_pose())
    return verts, regress_joints(body.regressor, verts)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def scenes(body):
    """Fifty generated scenes at the default sampler settings."""
    config = CameraSampleConfig(seed=2024)
    return [make_scene(config, i, body) for i in range(50)]
