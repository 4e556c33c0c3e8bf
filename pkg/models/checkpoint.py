import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional

import torch.nn as nn
from safetensors.torch import load_model, save_model

from utils.artifacts import MissingArtifactError, dump_json

logger = logging.getLogger(__name__)

WEIGHTS_FILE = "checkpoint.safetensors"
SIDECAR_FILE = "checkpoint.json"


def save_checkpoint(
    model: nn.Module, run_dir, family: str, config: Dict[str, Any], seed: int, epoch: int, prov: Optional[Dict[str, Any]] = None
) -> Path:
    """safetensors payload (names, shapes, dtypes, little-endian) plus a JSON sidecar"""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    save_model(model, str(run_dir / WEIGHTS_FILE), metadata={"family": family, "epoch": str(epoch)})
    sidecar = {"family": family, "config": config, "seed": seed, "epoch": epoch}
    if prov is not None:
        sidecar["provenance"] = prov
    (run_dir / SIDECAR_FILE).write_text(dump_json(sidecar), encoding="utf-8")
    logger.info(f"💾 Saved {family} checkpoint (epoch {epoch}) to {run_dir}")
    return run_dir / WEIGHTS_FILE


def read_sidecar(run_dir) -> Dict[str, Any]:
    path = Path(run_dir) / SIDECAR_FILE
    if not path.exists():
        raise MissingArtifactError(f"Missing checkpoint (run `train` first): {path}")
    return json.loads(path.read_text(encoding="utf-8"))


def load_checkpoint(model: nn.Module, run_dir) -> nn.Module:
    """Load weights into an already-built model of the same architecture"""
    path = Path(run_dir) / WEIGHTS_FILE
    if not path.exists():
        raise MissingArtifactError(f"Missing checkpoint (run `train` first): {path}")
    missing, unexpected = load_model(model, str(path), strict=True)
    if missing or unexpected:
        logger.warning(f"⚠️ Checkpoint key mismatch: missing={missing} unexpected={unexpected}")
    return model
