"""Tests for error documents, logging setup and run metrics."""
import json
import logging

import pytest

from services.shared.errors import (
    ConfigError,
    DiscontinuousLog,
    ErrorCode,
    ErrorResponse,
    PipelineError,
)
from services.shared.logging_config import configure_logging
from services.shared.observability import COMMANDS_TOTAL, write_metrics


class TestPipelineError:
    def test_codes_follow_subclass(self):
        assert DiscontinuousLog("gap").error_code == ErrorCode.DISCONTINUOUS_LOG
        assert ConfigError("bad").error_code == ErrorCode.CONFIG_ERROR

    def test_is_value_error(self):
        with pytest.raises(ValueError):
            raise ConfigError("bad")

    def test_context_prefixes_message(self):
        error = DiscontinuousLog("Gap of 1.000 s", detail="stop=40.0 start=41.0")
        assert error.with_context("pred/N03T1.txt:2") is error
        assert str(error) == "pred/N03T1.txt:2: Gap of 1.000 s"


class TestErrorResponse:
    def test_from_pipeline_error(self):
        error = ConfigError("Invalid run configuration", detail="threshold", context="run.json")
        document = json.loads(ErrorResponse.from_exception(error).model_dump_json())
        assert document["error_code"] == "CONFIG_ERROR"
        assert document["message"] == "Invalid run configuration"
        assert document["detail"] == "threshold"
        assert document["context"] == "run.json"
        assert document["timestamp"]

    def test_other_exceptions_are_internal(self):
        response = ErrorResponse.from_exception(KeyError("x"))
        assert response.error_code == ErrorCode.INTERNAL_ERROR

    def test_every_code_has_a_distinct_value(self):
        values = [code.value for code in ErrorCode]
        assert len(values) == len(set(values))


class TestConfigureLogging:
    @pytest.fixture(autouse=True)
    def restore_root(self):
        root = logging.getLogger()
        handlers, level = list(root.handlers), root.level
        yield
        root.handlers[:] = handlers
        root.setLevel(level)

    def test_json_records(self, capsys):
        configure_logging("INFO", json_logs=True)
        logging.getLogger("services.test").info("windows extracted")
        record = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert record["message"] == "windows extracted"
        assert record["levelname"] == "INFO"
        assert record["name"] == "services.test"

    def test_plain_records_and_level(self, capsys):
        configure_logging("warning", json_logs=False)
        logging.getLogger("services.test").info("hidden")
        logging.getLogger("services.test").warning("shown")
        err = capsys.readouterr().err
        assert "hidden" not in err
        assert " - services.test - WARNING - shown" in err

    def test_single_handler(self):
        configure_logging()
        configure_logging()
        assert len(logging.getLogger().handlers) == 1


def test_write_metrics(tmp_path):
    COMMANDS_TOTAL.labels(command="unit", status="ok").inc()
    path = write_metrics(tmp_path)
    assert path == tmp_path / "metrics.prom"
    assert 'es_pipeline_commands_total{command="unit",status="ok"}' in path.read_text()
