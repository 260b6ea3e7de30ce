"""Tests for run directories and their manifests."""
import hashlib
import json

from services.pipeline_cli.app.runs import MANIFEST_NAME, RunDirectory, file_digest


def test_file_digest_matches_sha256(tmp_path):
    path = tmp_path / "input.txt"
    path.write_bytes(b"00:00-00:40, Others\n")
    assert file_digest(path) == hashlib.sha256(b"00:00-00:40, Others\n").hexdigest()


def test_manifest_lists_inputs_and_artifacts(tmp_path):
    source = tmp_path / "gt.json"
    source.write_text("{}")
    run = RunDirectory(tmp_path / "runs", "score").open()
    run.add_inputs(source, None)
    run.write_json("metrics.json", {"accuracy": 1.0})
    run.write_text("summary.md", "ok\n")
    run.finalize({"resolution": 1.0})

    manifest = json.loads((run.path / MANIFEST_NAME).read_text())
    assert manifest["command"] == "score"
    assert manifest["inputs"] == {str(source): file_digest(source)}
    assert manifest["artifacts"] == ["metrics.json", "summary.md"]
    assert manifest["parameters"] == {"resolution": 1.0}
    assert (run.path / "metrics.prom").exists()


def test_directory_inputs_are_expanded(tmp_path):
    folder = tmp_path / "gt"
    folder.mkdir()
    (folder / "a.json").write_text("1")
    (folder / "b.json").write_text("2")
    run = RunDirectory(tmp_path / "runs", "validate").open()
    run.add_inputs(folder)
    run.finalize({})
    manifest = json.loads((run.path / MANIFEST_NAME).read_text())
    assert sorted(manifest["inputs"]) == [str(folder / "a.json"), str(folder / "b.json")]


def test_manifest_is_reproducible(tmp_path):
    source = tmp_path / "in.csv"
    source.write_text("video_id\nN03T1\n")
    texts = []
    for _ in range(2):
        run = RunDirectory(tmp_path / "runs", "aggregate").open()
        run.add_inputs(source)
        run.write_json("summary.json", {"b": 2, "a": 1})
        run.finalize({"seed": 0})
        texts.append((run.path / MANIFEST_NAME).read_text())
    assert texts[0] == texts[1]
