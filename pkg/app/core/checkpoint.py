"""
Checkpoint persistence: a JSON manifest listing tensor names, shapes and byte
offsets plus one flat little-endian float32 blob next to it.

Values are trained in float64 and stored as float32, so a round trip is exact
only to float32 precision.
"""
import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Mapping, Tuple

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from app.core.exceptions import CheckpointIntegrityException

logger = logging.getLogger(__name__)

BLOB_DTYPE = np.dtype("<f4")
FORMAT_VERSION = 1


class TensorEntry(BaseModel):
    name: str
    shape: List[int]
    offset: int = Field(..., ge=0, description="Byte offset into the blob")


class CheckpointManifest(BaseModel):
    format_version: int = FORMAT_VERSION
    blob: str
    blob_bytes: int = Field(..., ge=0)
    sha256: str
    tensors: List[TensorEntry]
    topology: Dict[str, Any] = Field(default_factory=dict)


def blob_path_for(manifest_path: Path) -> Path:
    return manifest_path.with_suffix(".bin")


def save_checkpoint(manifest_path: Path, tensors: Mapping[str, np.ndarray], topology: Dict[str, Any]) -> CheckpointManifest:
    """
    Write ``tensors`` (in insertion order) and the topology record.

    Args:
        manifest_path: Path of the JSON manifest; the blob gets the same stem and a .bin suffix
        tensors: Name to array mapping
        topology: JSON-serialisable description needed to rebuild the model

    Returns:
        The manifest that was written
    """
    manifest_path = Path(manifest_path)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    blob_path = blob_path_for(manifest_path)

    entries = []
    chunks = []
    offset = 0
    for name, value in tensors.items():
        arr = np.ascontiguousarray(np.asarray(value, dtype=BLOB_DTYPE))
        entries.append(TensorEntry(name=name, shape=list(arr.shape), offset=offset))
        raw = arr.tobytes()
        chunks.append(raw)
        offset += len(raw)
    blob = b"".join(chunks)
    blob_path.write_bytes(blob)

    manifest = CheckpointManifest(
        blob=blob_path.name,
        blob_bytes=len(blob),
        sha256=hashlib.sha256(blob).hexdigest(),
        tensors=entries,
        topology=topology,
    )
    manifest_path.write_text(manifest.model_dump_json(indent=2), encoding="utf-8")
    logger.info(f"Checkpoint written: {manifest_path} ({len(entries)} tensors, {len(blob)} bytes)")
    return manifest


def load_checkpoint(manifest_path: Path) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    """
    Read a checkpoint back as float64 arrays.

    Returns:
        (name -> array, topology)

    Raises:
        CheckpointIntegrityException: If the manifest is unreadable, the blob is
            missing, truncated, or its sha256 does not match the manifest
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise CheckpointIntegrityException(
            f"Checkpoint manifest not found at {manifest_path}",
            details={"path": str(manifest_path)}
        )
    try:
        manifest = CheckpointManifest.model_validate(json.loads(manifest_path.read_text(encoding="utf-8")))
    except (json.JSONDecodeError, ValidationError) as e:
        raise CheckpointIntegrityException(
            f"Checkpoint manifest is malformed: {str(e)}",
            details={"path": str(manifest_path), "error_type": type(e).__name__}
        )

    blob_path = manifest_path.parent / manifest.blob
    if not blob_path.exists():
        raise CheckpointIntegrityException(
            f"Checkpoint blob not found at {blob_path}",
            details={"path": str(blob_path)}
        )
    blob = blob_path.read_bytes()
    if len(blob) != manifest.blob_bytes:
        raise CheckpointIntegrityException(
            "Checkpoint blob size does not match its manifest",
            details={"path": str(blob_path), "expected_bytes": manifest.blob_bytes, "actual_bytes": len(blob)}
        )
    digest = hashlib.sha256(blob).hexdigest()
    if digest != manifest.sha256:
        raise CheckpointIntegrityException(
            "Checkpoint blob digest does not match its manifest",
            details={"path": str(blob_path), "expected_sha256": manifest.sha256, "actual_sha256": digest}
        )

    tensors: Dict[str, np.ndarray] = {}
    for entry in manifest.tensors:
        count = int(np.prod(entry.shape)) if entry.shape else 1
        end = entry.offset + count * BLOB_DTYPE.itemsize
        if end > len(blob):
            raise CheckpointIntegrityException(
                f"Tensor '{entry.name}' extends past the end of the blob",
                details={"tensor": entry.name, "offset": entry.offset, "bytes": len(blob)}
            )
        values = np.frombuffer(blob, dtype=BLOB_DTYPE, count=count, offset=entry.offset)
        tensors[entry.name] = values.astype(np.float64).reshape(entry.shape)
    logger.info(f"Checkpoint loaded: {manifest_path} ({len(tensors)} tensors)")
    return tensors, manifest.topology
