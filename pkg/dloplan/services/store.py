"""Versioned JSON documents and JSON Lines logs."""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Optional, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from dloplan.errors import FormatError
from dloplan.services.der_model import DloConfig, DloParams
from dloplan.services.identification import IdObservation, params_from_theta


logger = logging.getLogger(__name__)

FORMAT_PREFIX = "dloplan."
FORMAT_VERSION = 1


def plain(value: Any) -> Any:
    """Convert numpy containers and scalars into JSON-native values."""

    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return value.item()
    if isinstance(value, dict):
        return {str(key): plain(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [plain(item) for item in value]
    return value


def dumps(payload: Any) -> str:
    return json.dumps(plain(payload), sort_keys=True, indent=2, allow_nan=False)


def write_document(path: Path, kind: str, payload: Dict[str, Any]) -> Path:
    """Write ``payload`` tagged with ``format``/``version``; raises on I/O errors."""

    path = Path(path)
    document = dict(payload)
    document["format"] = FORMAT_PREFIX + kind
    document["version"] = FORMAT_VERSION
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(dumps(document) + "\n", encoding="utf-8")
    except OSError:
        logger.exception("Could not write %s document to %s", kind, path)
        raise
    return path


def read_json(path: Path) -> Dict[str, Any]:
    path = Path(path)
    try:
        raw_content = path.read_text(encoding="utf-8")
    except OSError as exc:
        logger.exception("Could not read %s", path)
        raise FormatError(f"cannot read {path}: {exc}") from exc
    try:
        payload = json.loads(raw_content)
    except json.JSONDecodeError as exc:
        logger.warning("Invalid JSON in %s: %s", path, exc)
        raise FormatError(f"invalid JSON in {path}: {exc}") from exc
    if not isinstance(payload, dict):
        raise FormatError(f"{path} does not hold a JSON object")
    return payload


def read_document(path: Path, kind: str) -> Dict[str, Any]:
    payload = read_json(path)
    expected = FORMAT_PREFIX + kind
    if payload.get("format") != expected:
        raise FormatError(f"{path} is not a {expected} document (format {payload.get('format')!r})")
    if payload.get("version") != FORMAT_VERSION:
        raise FormatError(f"{path} has unsupported version {payload.get('version')!r}")
    return payload


# ---------------------------------------------------------------------------
# Rod states
# ---------------------------------------------------------------------------


def dlo_to_dict(cfg: DloConfig) -> Dict[str, Any]:
    return {
        "vertices": cfg.vertices.tolist(),
        "quaternions": Rotation.from_matrix(cfg.frames).as_quat().tolist(),
        "rest_lengths": cfg.rest_lengths.tolist(),
    }


def dlo_from_dict(payload: Dict[str, Any]) -> DloConfig:
    try:
        vertices = np.asarray(payload["vertices"], dtype=float)
        frames = Rotation.from_quat(np.asarray(payload["quaternions"], dtype=float)).as_matrix()
        rest_lengths = np.asarray(payload["rest_lengths"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed rod serialization: {exc}") from exc
    return DloConfig(vertices, frames, rest_lengths)


# ---------------------------------------------------------------------------
# Paths
# ---------------------------------------------------------------------------


def _nodes_payload(nodes: Iterable[Any]) -> List[Dict[str, Any]]:
    return [{"dlo": dlo_to_dict(node.dlo), "q": None if node.q is None else list(node.q)} for node in nodes]


def write_path(
    path: Path,
    task_name: str,
    params: DloParams,
    nodes: Iterable[Any],
    feasible: Optional[Iterable[Any]] = None,
    seed: Optional[int] = None,
) -> Path:
    payload = {
        "task": task_name,
        "seed": seed,
        "dlo_params": params.as_dict(),
        "nodes": _nodes_payload(nodes),
        "feasible_nodes": _nodes_payload(feasible) if feasible is not None else None,
    }
    return write_document(path, "path", payload)


def read_path(path: Path) -> Tuple[Dict[str, Any], List[Tuple[DloConfig, np.ndarray]]]:
    """Header fields and ``(rod, joints)`` pairs of a path dump."""

    payload = read_document(path, "path")
    try:
        nodes = [(dlo_from_dict(item["dlo"]), np.asarray(item["q"], dtype=float)) for item in payload["nodes"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed path dump {path}: {exc}") from exc
    if not nodes:
        raise FormatError(f"path dump {path} has no nodes")
    header = {key: value for key, value in payload.items() if key not in ("nodes", "feasible_nodes")}
    return header, nodes


# ---------------------------------------------------------------------------
# Observations
# ---------------------------------------------------------------------------


def write_observations(path: Path, observations: IdObservation, params: DloParams) -> Path:
    payload = {
        "dlo_params": params.as_dict(),
        "snapshots": [
            {"t": t, "dlo": dlo_to_dict(cfg)} for t, cfg in zip(observations.times, observations.snapshots)
        ],
    }
    return write_document(path, "observations", payload)


def read_observations(path: Path) -> IdObservation:
    payload = read_document(path, "observations")
    try:
        snapshots = payload["snapshots"]
        return IdObservation([dlo_from_dict(item["dlo"]) for item in snapshots], [float(item["t"]) for item in snapshots])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed observation file {path}: {exc}") from exc


def read_identified_params(path: Path, base: DloParams) -> DloParams:
    """Planner parameters from an identification result applied to ``base``."""

    payload = read_document(path, "identification")
    try:
        theta = (float(payload["log_twist_ratio"]), float(payload["log_density_ratio"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed identification result {path}: {exc}") from exc
    return params_from_theta(theta, base)


# ---------------------------------------------------------------------------
# Episode logs
# ---------------------------------------------------------------------------


class EpisodeLog:
    """JSON Lines writer: a header object, then one record per control step."""

    def __init__(self, path: Path, header: Dict[str, Any]) -> None:
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        head = dict(header)
        head["format"] = FORMAT_PREFIX + "episode"
        head["version"] = FORMAT_VERSION
        try:
            self._handle = self.path.open("w", encoding="utf-8")
        except OSError:
            logger.exception("Could not open episode log %s", self.path)
            raise
        self._write(head)

    def _write(self, record: Dict[str, Any]) -> None:
        self._handle.write(json.dumps(plain(record), sort_keys=True, allow_nan=False) + "\n")

    def record(self, step: Dict[str, Any]) -> None:
        self._write(step)

    def close(self, summary: Optional[Dict[str, Any]] = None) -> None:
        if summary is not None:
            self._write({"summary": summary})
        self._handle.close()

    def __enter__(self) -> "EpisodeLog":
        return self

    def __exit__(self, *exc_info: Any) -> None:
        if not self._handle.closed:
            self._handle.close()


def iter_episode_log(path: Path) -> Iterator[Dict[str, Any]]:
    path = Path(path)
    try:
        with path.open(encoding="utf-8") as handle:
            for number, line in enumerate(handle, start=1):
                if not line.strip():
                    continue
                try:
                    yield json.loads(line)
                except json.JSONDecodeError as exc:
                    raise FormatError(f"{path}:{number}: invalid JSON ({exc})") from exc
    except OSError as exc:
        logger.exception("Could not read episode log %s", path)
        raise FormatError(f"cannot read {path}: {exc}") from exc


def read_episode_log(path: Path) -> Tuple[Dict[str, Any], List[Dict[str, Any]], Optional[Dict[str, Any]]]:
    """Header, step records and summary (``None`` for an interrupted episode)."""

    records = list(iter_episode_log(path))
    if not records or records[0].get("format") != FORMAT_PREFIX + "episode":
        raise FormatError(f"{path} is not an episode log")
    header, steps, summary = records[0], [], None
    for record in records[1:]:
        if "summary" in record:
            summary = record["summary"]
        else:
            steps.append(record)
    return header, steps, summary


__all__ = [
    "EpisodeLog",
    "FORMAT_PREFIX",
    "FORMAT_VERSION",
    "dlo_from_dict",
    "dlo_to_dict",
    "dumps",
    "iter_episode_log",
    "plain",
    "read_document",
    "read_episode_log",
    "read_identified_params",
    "read_json",
    "read_observations",
    "read_path",
    "write_document",
    "write_observations",
    "write_path",
]
