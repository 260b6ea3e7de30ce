"""Tests for run configuration and the participant split check."""
import json

import pytest

from services.pipeline_cli.app.config import (
    RunConfig,
    Split,
    SplitEntry,
    check_split,
    load_run_config,
    load_split_manifest,
    participant_of,
)
from services.shared.errors import ConfigError


def entry(participant, session, split):
    return SplitEntry(participant=participant, session=session, split=split)


class TestParticipantOf:
    @pytest.mark.parametrize(
        "video_id, participant",
        [("N03T1", "N03"), ("S12T2", "S12"), ("N05", "N05"), ("clip", "clip")],
    )
    def test_prefix(self, video_id, participant):
        assert participant_of(video_id) == participant


class TestCheckSplit:
    def test_clean_manifest(self):
        manifest = [entry("N03", "T1", "train"), entry("N03", "T2", "train"), entry("S04", "T1", "test")]
        assert check_split(manifest) == []

    def test_participant_in_both_splits(self):
        manifest = [entry("N03", "T1", "train"), entry("N03", "T2", "test"), entry("S04", "T1", "test")]
        violations = check_split(manifest)
        assert [v.participant for v in violations] == ["N03"]
        assert violations[0].sessions == ["T1:train", "T2:test"]

    def test_video_ids_reduce_to_participants(self):
        manifest = [entry("N09T1", "T1", "train"), entry("N09T2", "T2", "test")]
        assert [v.participant for v in check_split(manifest)] == ["N09"]

    def test_violations_sorted_by_participant(self):
        manifest = [
            entry("S06", "T1", "train"),
            entry("S06", "T2", "test"),
            entry("N05", "T1", "test"),
            entry("N05", "T2", "train"),
        ]
        assert [v.participant for v in check_split(manifest)] == ["N05", "S06"]


class TestLoadSplitManifest:
    def test_csv(self, tmp_path):
        path = tmp_path / "split.csv"
        path.write_text("participant,session,split\nN03,T1,train\nS04,T1,test\n")
        manifest = load_split_manifest(path)
        assert [(e.participant, e.split) for e in manifest] == [("N03", Split.TRAIN), ("S04", Split.TEST)]

    def test_json(self, tmp_path):
        path = tmp_path / "split.json"
        path.write_text(json.dumps([{"participant": "N03", "session": "T1", "split": "test"}]))
        assert load_split_manifest(path)[0].split == Split.TEST

    def test_unknown_split_value(self, tmp_path):
        path = tmp_path / "split.csv"
        path.write_text("participant,session,split\nN03,T1,validation\n")
        with pytest.raises(ConfigError):
            load_split_manifest(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_split_manifest(tmp_path / "absent.csv")


class TestLoadRunConfig:
    def test_defaults(self):
        config = load_run_config()
        assert config.resolution == 1.0
        assert config.window_s == 3.0
        assert config.stride_s == 1.0
        assert config.n_trees == 100
        assert config.psi == 256
        assert config.threshold == 0.5

    def test_flags_override_file(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"n_trees": 50, "seed": 3}))
        config = load_run_config(path, {"n_trees": 10, "seed": None})
        assert config.n_trees == 10
        assert config.seed == 3

    def test_file_overrides_environment(self, tmp_path, monkeypatch):
        monkeypatch.setenv("ES_PSI", "64")
        monkeypatch.setenv("ES_N_TREES", "7")
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"psi": 32}))
        config = load_run_config(path)
        assert config.psi == 32
        assert config.n_trees == 7

    def test_invalid_value(self):
        with pytest.raises(ConfigError):
            load_run_config(overrides={"threshold": 1.5})

    def test_unreadable_file(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError):
            load_run_config(path)

    def test_leaking_split_manifest(self, tmp_path):
        manifest = tmp_path / "split.csv"
        manifest.write_text("participant,session,split\nN03,T1,train\nN03,T2,test\n")
        with pytest.raises(ConfigError) as excinfo:
            load_run_config(overrides={"split_manifest": manifest})
        assert "N03" in excinfo.value.message

    def test_clean_split_manifest_accepted(self, tmp_path):
        manifest = tmp_path / "split.csv"
        manifest.write_text("participant,session,split\nN03,T1,train\nS04,T1,test\n")
        assert isinstance(load_run_config(overrides={"split_manifest": manifest}), RunConfig)
