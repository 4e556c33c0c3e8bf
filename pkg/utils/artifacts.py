import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional

from filelock import FileLock

from config import CODE_VERSION

logger = logging.getLogger(__name__)


class MissingArtifactError(FileNotFoundError):
    """A subcommand ran before the step that produces its inputs"""


def provenance(config_hash: str, seed: int) -> Dict[str, Any]:
    return {"config_hash": config_hash, "seed": seed, "code_version": CODE_VERSION}


def provenance_comment(prov: Dict[str, Any]) -> str:
    """Markdown footer carrying the same provenance as the JSON artifacts"""
    fields = ", ".join(f"{key}={prov[key]}" for key in sorted(prov))
    return f"\n<!-- provenance: {fields} -->\n"


def dump_json(data: Any) -> str:
    return json.dumps(data, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def write_json(path, data: Dict[str, Any], prov: Optional[Dict[str, Any]] = None) -> Path:
    """Write a JSON artifact; identical inputs always produce identical bytes"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = dict(data)
    if prov is not None:
        payload["provenance"] = prov
    path.write_text(dump_json(payload), encoding="utf-8")
    return path


def read_json(path, what: str = "artifact") -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"Missing {what}: {path}")
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def is_current(path, config_hash: str) -> bool:
    """True when the artifact exists and was produced under the same config hash"""
    path = Path(path)
    if not path.exists():
        return False
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError):
        return False
    return data.get("provenance", {}).get("config_hash") == config_hash


def update_index(experiment_dir, key: str, entry: Dict[str, Any], prov: Dict[str, Any]) -> Path:
    """Record a run in experiment.json; the file lock serialises concurrent CLI processes"""
    experiment_dir = Path(experiment_dir)
    experiment_dir.mkdir(parents=True, exist_ok=True)
    index_path = experiment_dir / "experiment.json"
    with FileLock(str(index_path) + ".lock"):
        index = {"runs": {}}
        if index_path.exists():
            index = json.loads(index_path.read_text(encoding="utf-8"))
        index.setdefault("runs", {})[key] = entry
        index["provenance"] = prov
        index_path.write_text(dump_json(index), encoding="utf-8")
    logger.debug(f"Indexed run {key} in {index_path}")
    return index_path
