"""End-to-end tests for the recognition and feedback workflows.

Both flows run over a synthetic dataset:
1. Replayed LLM responses → parsed log → validation → metrics against ground truth
2. Keypoints → window features → nurse-trained forest → attribution → student report
"""
import httpx
import numpy as np
import pytest

from services.evaluation_service.app.metrics import MetricsReport, score_logs
from services.feedback_service.app.features import FeatureMatrix, WindowSpec, build_feature_matrix
from services.feedback_service.app.feedback import (
    Rendering,
    WindowProvenance,
    build_alignment_bundle,
    select_top_attributions,
    verbalize_template,
)
from services.feedback_service.app.isolation_forest import anomaly_scores, classify, fit_forest
from services.feedback_service.app.keypoints import Role, read_keypoints
from services.feedback_service.app.shapley import shapley_attribution
from services.pipeline_cli.app.synth import video_ref, write_synth_dataset
from services.recognition_service.app.gateway import GatewayMode, GatewaySettings, LLMGateway
from services.recognition_service.app.recognition import recognize
from services.recognition_service.app.sequence_validator import validate
from services.shared.domain import ActivityLog

pytestmark = pytest.mark.e2e

VIDEOS = 4


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("synthetic")
    write_synth_dataset(root, n_videos=VIDEOS, seed=11, fps=10, keypoint_seconds=20)
    return root


@pytest.fixture
def network_calls():
    return []


@pytest.fixture
def gateway(dataset, network_calls):
    def handler(request):
        network_calls.append(request)
        return httpx.Response(500)

    settings = GatewaySettings(mode=GatewayMode.REPLAY, fixture_dir=dataset / "fixtures")
    with LLMGateway(settings, transport=httpx.MockTransport(handler)) as client:
        yield client


@pytest.mark.parametrize("prompt_id", ["A", "B"])
def test_replayed_recognition_is_scored_without_network(dataset, gateway, network_calls, prompt_id):
    reports = []
    for gt_path in sorted((dataset / "gt").glob("*.json")):
        gt = ActivityLog.read_json(gt_path)
        parsed = recognize(gateway, video_ref(gt.video_id), prompt_id, video_id=gt.video_id)

        assert parsed.log.video_id == gt.video_id
        assert parsed.log.is_continuous()
        assert validate(parsed.log).video_id == gt.video_id

        report = score_logs(gt, parsed.log)
        assert isinstance(report, MetricsReport)
        assert 0.5 < report.accuracy <= 1.0
        reports.append(report)

    assert len(reports) == VIDEOS
    assert network_calls == []


def _matrix(dataset, pattern):
    spec = WindowSpec(length_s=3.0, stride_s=1.0)
    return FeatureMatrix.concat(
        [
            build_feature_matrix(read_keypoints(path), spec)
            for path in sorted((dataset / "keypoints").glob(pattern))
        ]
    )


def test_student_windows_get_feedback(dataset, tmp_path):
    nurses = _matrix(dataset, "N*.json")
    students = _matrix(dataset, "S*.json")
    assert set(nurses.roles) == {Role.NURSE.value}

    forest = fit_forest(nurses, n_trees=50, subsample_size=64, seed=0)
    nurse_scores = anomaly_scores(forest, nurses.values)
    student_scores = anomaly_scores(forest, students.values)
    assert student_scores.mean() > nurse_scores.mean()

    row = int(np.argmax(student_scores))
    attribution = shapley_attribution(forest, students.values[row], nurses, n_permutations=20, seed=0)
    assert abs(attribution.efficiency_gap) <= 6 * attribution.efficiency_se + 1e-9

    verdict = classify(attribution.score)
    report = verbalize_template(
        verdict,
        select_top_attributions(attribution, 5),
        attribution=attribution,
        score=attribution.score,
    )
    assert report.rendering == Rendering.TEMPLATE

    start = students.window_starts[row]
    provenance = WindowProvenance(
        video_id=students.video_ids[row], start_s=start, stop_s=start + 3.0, window_index=row, role="student"
    )
    bundle = build_alignment_bundle(report, attribution, provenance, out_dir=tmp_path / "bundle")
    assert set(bundle.mapping) == {claim.text for claim in report.claims}
    assert (tmp_path / "bundle" / "report.md").read_text().strip()
