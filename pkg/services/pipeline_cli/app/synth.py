"""Synthetic dataset generator.

Produces golden-rule ground-truth logs, imperfect Prompt A/B responses,
replay fixtures for ``recognize`` and nurse/student keypoint series in which
students sway sideways and hold their hands low.
"""
import logging
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from services.feedback_service.app.keypoints import COCO_JOINTS, KeypointSeries, Role, write_keypoints_json
from services.recognition_service.app.gateway import ExchangeRecord, FixtureStore, request_digest
from services.recognition_service.app.log_parser import LogFormat, render_log
from services.recognition_service.app.prompts import assemble_prompt
from services.shared.domain import ActivityClass, ActivityInterval, ActivityLog, LogSource

logger = logging.getLogger(__name__)

ROUND_CLASSES = (0, 1, 2, 3, 4, 5, 6, 7)
# Typical step durations in seconds (low, high)
STEP_SECONDS: Dict[int, tuple] = {
    0: (30, 50),
    1: (3, 6),
    2: (10, 20),
    3: (3, 6),
    4: (8, 15),
    5: (4, 8),
    6: (5, 12),
    7: (10, 20),
    8: (3, 10),
}
FIXTURE_TIMESTAMP = "2024-01-01T00:00:00+00:00"
SWAY_PX = 18.0
HAND_DROP_PX = 35.0

_BASE_POSE = np.array(
    [
        [320, 100], [312, 92], [328, 92], [304, 96], [336, 96],
        [290, 160], [350, 160], [280, 220], [360, 220], [300, 270], [340, 270],
        [300, 300], [340, 300], [300, 380], [340, 380], [300, 450], [340, 450],
    ],
    dtype=float,
)


def video_ref(video_id: str) -> str:
    return f"videos/{video_id}.mp4"


def golden_log(
    video_id: str, rounds: int = 2, seed: int = 0, include_positioning: bool = True
) -> ActivityLog:
    """Contiguous ground-truth log: Others, ``rounds`` golden rounds, Others."""
    rng = np.random.default_rng(seed)
    classes: List[int] = [int(ActivityClass.OTHERS)]
    for _ in range(rounds):
        classes.extend(c for c in ROUND_CLASSES if include_positioning or c != 6)
    classes.append(int(ActivityClass.OTHERS))

    intervals = []
    start = 0
    for activity in classes:
        low, high = STEP_SECONDS[activity]
        stop = start + int(rng.integers(low, high + 1))
        intervals.append(ActivityInterval.of(start, stop, activity))
        start = stop
    return ActivityLog(video_id=video_id, intervals=tuple(intervals), continuous=True)


def perturb_log(log: ActivityLog, seed: int = 0, max_shift: int = 3, relabel_rate: float = 0.1) -> ActivityLog:
    """Imperfect prediction: shifted boundaries and occasional relabelling to Others."""
    rng = np.random.default_rng(seed)
    bounds = [log.intervals[0].start_s] + [interval.stop_s for interval in log.intervals]
    for i in range(1, len(bounds) - 1):
        shifted = bounds[i] + int(rng.integers(-max_shift, max_shift + 1))
        bounds[i] = float(min(max(shifted, bounds[i - 1] + 1), bounds[i + 1] - 1))
    intervals = []
    for i, interval in enumerate(log.intervals):
        activity = int(interval.activity_class)
        if rng.random() < relabel_rate:
            activity = int(ActivityClass.OTHERS)
        intervals.append(
            ActivityInterval.of(bounds[i], bounds[i + 1], activity, justification="Visible in the footage.")
        )
    return ActivityLog(
        video_id=log.video_id, intervals=tuple(intervals), source=LogSource.LLM_PROMPT_A, continuous=True
    )


def synth_keypoints(
    video_id: str,
    role: Role,
    seconds: float = 30.0,
    fps: float = 30.0,
    seed: int = 0,
    missing_rate: float = 0.02,
) -> KeypointSeries:
    """Standing skeleton with breathing-scale jitter and dropped detections."""
    rng = np.random.default_rng(seed)
    frames = int(round(seconds * fps))
    t = np.arange(frames) / fps
    coords = np.repeat(_BASE_POSE[None, :, :], frames, axis=0)
    coords += rng.normal(0.0, 1.5, size=coords.shape)
    coords[:, 9:11, 1] += 6.0 * np.sin(2 * np.pi * 0.5 * t)[:, None]
    if Role(role) == Role.STUDENT:
        coords[:, 11:13, 0] += SWAY_PX * np.sin(2 * np.pi * 0.4 * t + rng.uniform(0, np.pi))[:, None]
        coords[:, 9:11, 1] += HAND_DROP_PX
    conf = rng.uniform(0.6, 1.0, size=(frames, len(COCO_JOINTS)))
    conf[rng.random(size=conf.shape) < missing_rate] = 0.0
    return KeypointSeries(video_id=video_id, fps=fps, coords=coords, conf=conf, role=Role(role))


def write_synth_dataset(
    out_dir: Path,
    n_videos: int = 4,
    seed: int = 0,
    fps: float = 30.0,
    keypoint_seconds: float = 30.0,
    model: str = "video-llm",
) -> Dict[str, int]:
    """Write gt/, pred_a/, pred_b/, keypoints/, fixtures/ and split.csv under out_dir.

    Nurse videos (N01T1, ...) go to the train split, student videos to test.
    """
    out_dir = Path(out_dir)
    for sub in ("gt", "pred_a", "pred_b", "keypoints"):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)
    store = FixtureStore(out_dir / "fixtures")
    split_rows = []

    for index in range(n_videos):
        video_seed = seed * 1000 + index
        participant = index // 2 + 1
        video_id = f"N{participant:02d}T{index % 2 + 1}"
        gt = golden_log(video_id, seed=video_seed, include_positioning=index % 3 != 2)
        gt.write_json(out_dir / "gt" / f"{video_id}.json")

        for prompt_id, folder, offset in (("A", "pred_a", 1), ("B", "pred_b", 2)):
            pred = perturb_log(gt, seed=video_seed + offset * 7919)
            text = render_log(pred, LogFormat(prompt_id))
            (out_dir / folder / f"{video_id}.txt").write_text(text, encoding="utf-8")
            reference = video_ref(video_id)
            prompt = assemble_prompt(prompt_id, video_ref=reference)
            store.save(
                ExchangeRecord(
                    digest=request_digest(model, prompt, reference),
                    prompt_id=prompt_id,
                    model=model,
                    attachment=reference,
                    response_text=text,
                    recorded_at=FIXTURE_TIMESTAMP,
                    endpoint_id="synthetic",
                )
            )

        student_id = f"S{participant:02d}T{index % 2 + 1}"
        for role, vid in ((Role.NURSE, video_id), (Role.STUDENT, student_id)):
            series = synth_keypoints(vid, role, keypoint_seconds, fps, seed=video_seed + (role == Role.STUDENT))
            write_keypoints_json(series, out_dir / "keypoints" / f"{vid}.json")
        split_rows.append({"participant": video_id, "session": video_id[-2:], "split": "train"})
        split_rows.append({"participant": student_id, "session": student_id[-2:], "split": "test"})

    pd.DataFrame(split_rows).drop_duplicates().to_csv(out_dir / "split.csv", index=False)
    logger.info(f"Synthesized {n_videos} videos under {out_dir}")
    return {"videos": n_videos, "keypoint_series": 2 * n_videos, "fixtures": 2 * n_videos}
