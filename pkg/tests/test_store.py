"""Versioned JSON documents, path dumps and episode logs."""

from __future__ import annotations

import json

import numpy as np
import pytest

from dloplan.errors import FormatError
from dloplan.services.der_model import DloParams
from dloplan.services.identification import IdObservation, IdResult
from dloplan.services.planner import PlanNode
from dloplan.services.store import (
    EpisodeLog,
    dlo_from_dict,
    dlo_to_dict,
    plain,
    read_document,
    read_episode_log,
    read_identified_params,
    read_json,
    read_observations,
    read_path,
    write_document,
    write_observations,
    write_path,
)


class TestDocuments:
    def test_written_document_is_tagged(self, tmp_path):
        path = write_document(tmp_path / "nested" / "doc.json", "report", {"value": np.float64(1.5)})
        payload = read_document(path, "report")
        assert payload["format"] == "dloplan.report"
        assert payload["version"] == 1
        assert payload["value"] == 1.5

    def test_invalid_json_is_a_format_error(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json", encoding="utf-8")
        with pytest.raises(FormatError):
            read_json(path)

    def test_top_level_must_be_an_object(self, tmp_path):
        path = tmp_path / "list.json"
        path.write_text("[1, 2]", encoding="utf-8")
        with pytest.raises(FormatError):
            read_json(path)

    def test_missing_file_is_a_format_error(self, tmp_path):
        with pytest.raises(FormatError):
            read_json(tmp_path / "absent.json")

    def test_kind_mismatch_is_rejected(self, tmp_path):
        path = write_document(tmp_path / "doc.json", "report", {})
        with pytest.raises(FormatError):
            read_document(path, "path")

    def test_plain_converts_numpy_values(self):
        converted = plain({"a": np.arange(2), "b": (np.int64(3), np.bool_(True))})
        assert converted == {"a": [0, 1], "b": [3, True]}


class TestRodSerialization:
    def test_rod_round_trip(self, stable_arch):
        restored = dlo_from_dict(json.loads(json.dumps(dlo_to_dict(stable_arch))))
        np.testing.assert_allclose(restored.vertices, stable_arch.vertices)
        np.testing.assert_allclose(restored.frames, stable_arch.frames, atol=1e-12)

    def test_missing_fields_are_rejected(self):
        with pytest.raises(FormatError):
            dlo_from_dict({"vertices": []})


class TestPathDump:
    def test_nodes_keep_rod_and_joints(self, tmp_path, stable_arch):
        q = np.linspace(-1.0, 1.0, 12)
        path = write_path(tmp_path / "path.json", "demo", DloParams(), [PlanNode(stable_arch, q)], seed=7)
        header, nodes = read_path(path)
        assert header["task"] == "demo"
        assert header["seed"] == 7
        assert len(nodes) == 1
        np.testing.assert_allclose(nodes[0][1], q)
        np.testing.assert_allclose(nodes[0][0].vertices, stable_arch.vertices)

    def test_empty_path_is_rejected(self, tmp_path):
        path = write_path(tmp_path / "path.json", "demo", DloParams(), [])
        with pytest.raises(FormatError):
            read_path(path)


class TestIdentificationFiles:
    def test_observations_round_trip(self, tmp_path, stable_arch):
        path = write_observations(tmp_path / "obs.json", IdObservation([stable_arch], [0.4]), DloParams())
        observed = read_observations(path)
        assert observed.times == [0.4]
        np.testing.assert_allclose(observed.snapshots[0].vertices, stable_arch.vertices)

    def test_identified_params_apply_to_the_base(self, tmp_path):
        result = IdResult(np.log([2.0, 3.0]), 0.0, 0, 0)
        path = write_document(tmp_path / "id.json", "identification", result.as_dict())
        params = read_identified_params(path, DloParams(bend_stiffness=0.5))
        assert params.twist_stiffness == pytest.approx(1.0)
        assert params.linear_density == pytest.approx(1.5)


class TestEpisodeLog:
    def test_header_steps_and_summary(self, tmp_path):
        path = tmp_path / "episode.jsonl"
        with EpisodeLog(path, {"task": "demo"}) as log:
            log.record({"k": 0, "u": np.zeros(2)})
            log.record({"k": 1, "u": np.ones(2)})
            log.close({"success": True})
        header, steps, summary = read_episode_log(path)
        assert header["task"] == "demo"
        assert [step["k"] for step in steps] == [0, 1]
        assert summary == {"success": True}

    def test_interrupted_log_has_no_summary(self, tmp_path):
        path = tmp_path / "episode.jsonl"
        with EpisodeLog(path, {"task": "demo"}) as log:
            log.record({"k": 0})
        _, steps, summary = read_episode_log(path)
        assert len(steps) == 1
        assert summary is None

    def test_foreign_file_is_not_a_log(self, tmp_path):
        path = tmp_path / "other.jsonl"
        path.write_text('{"format": "something"}\n', encoding="utf-8")
        with pytest.raises(FormatError):
            read_episode_log(path)
