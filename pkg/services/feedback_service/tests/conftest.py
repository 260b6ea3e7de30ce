"""Shared fixtures for the feedback pipeline tests."""
import numpy as np
import pytest

from services.feedback_service.app.keypoints import COCO_JOINTS, KeypointSeries, Role

FPS = 10.0


def _skeleton(rng, frames, sway=0.0, hand_drop=0.0):
    """Standing skeleton with small jitter; sway moves the hips sideways, hand_drop lowers the wrists."""
    base = np.array(
        [
            [320, 100], [312, 92], [328, 92], [304, 96], [336, 96],
            [290, 160], [350, 160], [280, 220], [360, 220], [300, 270], [340, 270],
            [300, 300], [340, 300], [300, 380], [340, 380], [300, 450], [340, 450],
        ],
        dtype=float,
    )
    t = np.arange(frames) / FPS
    coords = np.repeat(base[None, :, :], frames, axis=0)
    coords += rng.normal(0.0, 1.0, size=coords.shape)
    coords[:, 9:11, 1] += 6.0 * np.sin(2 * np.pi * 0.5 * t)[:, None] + hand_drop
    coords[:, 11:13, 0] += sway * np.sin(2 * np.pi * 0.4 * t)[:, None]
    return coords


@pytest.fixture
def make_series():
    def factory(seconds=10.0, role=Role.NURSE, seed=0, sway=0.0, hand_drop=0.0, video_id="N01T1"):
        rng = np.random.default_rng(seed)
        frames = int(seconds * FPS)
        coords = _skeleton(rng, frames, sway, hand_drop)
        return KeypointSeries(
            video_id=video_id,
            fps=FPS,
            coords=coords,
            conf=np.full((frames, len(COCO_JOINTS)), 0.9),
            role=role,
        )

    return factory
