"""
In-process caches.

Loaded datasets are kept in an LRU cache keyed by manifest path, modality subset
and manifest mtime, so repeated commands over one manifest and modality subset in a
process parse the CSVs once. Served predictions are kept in a TTL cache
keyed by the MD5 of the canonical request payload.
"""
import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Tuple

from cachetools import LRUCache, TTLCache

from app.core.config import settings

logger = logging.getLogger(__name__)

dataset_cache: LRUCache = LRUCache(maxsize=settings.dataset_cache_size)
prediction_cache: TTLCache = TTLCache(maxsize=settings.prediction_cache_size, ttl=settings.prediction_cache_ttl)


def dataset_cache_key(manifest_path: Path, modalities: Optional[Sequence[str]]) -> Tuple[str, Tuple[str, ...], float]:
    resolved = Path(manifest_path).resolve()
    mtime = resolved.stat().st_mtime if resolved.exists() else 0.0
    subset = tuple(modalities) if modalities is not None else ()
    return str(resolved), subset, mtime


def get_cache_key(payload: Dict[str, Any]) -> str:
    """
    MD5 of a JSON payload with sorted keys.

    Args:
        payload: Request body as plain data

    Returns:
        Hex digest
    """
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.md5(canonical.encode("utf-8")).hexdigest()


def get_cached_prediction(payload: Dict[str, Any]) -> Optional[Dict[str, Any]]:
    key = get_cache_key(payload)
    result = prediction_cache.get(key)
    if result is not None:
        logger.info(f"Cache hit for key: {key[:8]}...")
    return result


def cache_prediction(payload: Dict[str, Any], result: Dict[str, Any]) -> None:
    key = get_cache_key(payload)
    prediction_cache[key] = result
    logger.debug(f"Cached prediction for key: {key[:8]}...")


def clear_caches() -> None:
    """Empty both caches (used when a new checkpoint is loaded and by tests)."""
    dataset_cache.clear()
    prediction_cache.clear()
    logger.info("Dataset and prediction caches cleared")
