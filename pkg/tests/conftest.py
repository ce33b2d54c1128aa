import numpy as np
import pytest

from pose2gait.core import JOINTS_FULL, PoseSequence, WalkMetadata, WalkRecord, GaitFeatures
from pose2gait.synthgait import generate_dataset


def make_sequence(n_frames=30, joints=JOINTS_FULL, seed=0, fps=30.0):
    rng = np.random.default_rng(seed)
    frames = np.empty((n_frames, len(joints), 3))
    frames[:, :, :2] = rng.uniform(-50, 50, size=(n_frames, len(joints), 2))
    frames[:, :, 2] = 1.0
    return PoseSequence(frames, fps, tuple(joints))


def make_record(walk_id="DS1-S000-W000", subject="DS1-S000", cohort="DS1", tracker="TrackerA", **kw):
    seq = make_sequence(**kw)
    truth = GaitFeatures(0.6, 17.0, 30.0, 50.0)
    return WalkRecord(WalkMetadata(walk_id, subject, cohort, tracker), seq, truth)


@pytest.fixture(scope="session")
def small_dataset():
    """4 DS1 + 3 DS2 subjects, 3 walks each, all three trackers (63 records)."""
    return generate_dataset({"DS1": 4, "DS2": 3}, 3, rng_seed=3)
