import numpy as np
import pytest

from gramtraj.geometry import point_from_landmarks
from gramtraj.trajectory import build_trajectory


def random_config(rng, n=10):
    """Generic centered-able landmark matrix; rank 2 with probability one."""
    return rng.standard_normal((n, 2)) * rng.uniform(0.5, 2.0, size=2)


def random_point(rng, n=10):
    return point_from_landmarks(random_config(rng, n))


def rigid(z, rng, reflect=False):
    phi = rng.uniform(0, 2 * np.pi)
    o = np.array([[np.cos(phi), -np.sin(phi)], [np.sin(phi), np.cos(phi)]])
    if reflect:
        o = o @ np.diag([1.0, -1.0])
    return z @ o + rng.normal(0, 5, size=2)


def random_walk_frames(rng, length, n=8, step=0.15):
    z = random_config(rng, n)
    frames = [z]
    for _ in range(length - 1):
        z = z + step * rng.standard_normal(z.shape)
        frames.append(z)
    return frames


def random_trajectory(rng, length, n=8, step=0.15, label=None):
    return build_trajectory(random_walk_frames(rng, length, n, step), label=label)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


SQUARE = np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, -1.0], [-1.0, 1.0]])


def synth_trajectories(**kw):
    from gramtraj.data import SynthSpec, synth_generate
    recs = synth_generate(SynthSpec(**kw))
    return [build_trajectory(r.frames, r.id, r.label) for r in recs]


def clean_set(n_classes=2, per_class=6, seed=0):
    """Small noise-free set separated by construction."""
    return synth_trajectories(n_classes=n_classes, per_class=per_class, n_landmarks=10, frames=(6, 9),
                              noise=0.0, rigid_motion=False, rate_warp=0.0, subject_jitter=0.02, seed=seed)


def pytest_terminal_summary(terminalreporter):
    acceptance = __import__("sys").modules.get("test_acceptance")
    if acceptance is None or not acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(acceptance.RESULTS):
        terminalreporter.write_line(acceptance.RESULTS[number])
