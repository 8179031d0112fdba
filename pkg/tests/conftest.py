import numpy as np
import pytest

from support import canonical_landmarks, face_cloud, scene_intrinsics


@pytest.fixture(scope="session")
def landmarks():
    return canonical_landmarks()

@pytest.fixture(scope="session")
def intrinsics():
    return scene_intrinsics()


@pytest.fixture(scope="session")
def face_scene():
    """(cloud, landmarks, intrinsics) posed so every region gets points."""
    return face_cloud(), canonical_landmarks(), scene_intrinsics()


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def pytest_terminal_summary(terminalreporter):
    """Replay the per-criterion verdict lines after the test summary."""
    try:
        from test_acceptance import VERDICTS
    except ImportError:
        return
    if VERDICTS:
        terminalreporter.section("acceptance verdicts")
        for line in VERDICTS:
            terminalreporter.write_line(line)
