from fastapi import APIRouter, Request
from slowapi import Limiter
from slowapi.util import get_remote_address
import logging
from concurrent.futures import ThreadPoolExecutor
import asyncio
from typing import Any, Dict

import numpy as np

from app.api.schemas import (
    HealthResponse,
    ModelInfoResponse,
    PredictRequest,
    PredictResponse,
)
from app.core.cache import cache_prediction, get_cached_prediction
from app.core.config import settings
from app.core.exceptions import ShapeMismatchException, UnknownModalityException
from app.core.models import ModelManager
from app.services.mctn import ModelBundle, infer

logger = logging.getLogger(__name__)

router = APIRouter()

limiter = Limiter(key_func=get_remote_address, enabled=settings.rate_limit_enabled)

# Inference runs off the event loop; one worker keeps numpy calls serialized
ml_executor = ThreadPoolExecutor(max_workers=1, thread_name_prefix="ml-worker")


def _check_sources(bundle: ModelBundle, sources: Dict[str, Any]) -> None:
    expected = bundle.input_modalities
    unexpected = sorted(set(sources) - set(expected))
    missing = sorted(set(expected) - set(sources))
    if unexpected or missing:
        raise UnknownModalityException(
            f"The served model reads exactly {expected}",
            details={"expected": expected, "unexpected": unexpected, "missing": missing}
        )
    for m in expected:
        width = len(sources[m][0])
        if width != bundle.dims[m]:
            raise ShapeMismatchException(
                f"Modality '{m}' has {width} features per frame, the model expects {bundle.dims[m]}",
                details={"op": "predict", "modality": m, "shapes": [[len(sources[m]), width], [bundle.dims[m]]]}
            )


def run_prediction(bundle: ModelBundle, sources: Dict[str, Any]) -> Dict[str, Any]:
    """Single-sample source-only prediction as a response dict."""
    frames = {m: np.asarray(v, dtype=np.float64) for m, v in sources.items()}
    output = infer(bundle, frames)[0]
    result: Dict[str, Any] = {
        "task": bundle.task,
        "variant": bundle.spec.id,
        "direction": bundle.spec.direction,
    }
    if bundle.task == "regression":
        score = float(output)
        result["prediction"] = score
        result["sentiment"] = "positive" if score >= 0.0 else "negative"
    else:
        probs = [float(p) for p in output]
        result["probabilities"] = probs
        result["predicted_class"] = int(np.argmax(output))
    return result


@router.post("/predict", response_model=PredictResponse)
@limiter.limit(f"{settings.rate_limit_requests}/minute")
async def predict_endpoint(request: Request, predict_req: PredictRequest):
    """
    Predict from source-modality frames.

    Rate limit: settings.rate_limit_requests per minute per IP.
    Cached results expire after settings.prediction_cache_ttl seconds.

    Args:
        request: FastAPI Request object (for rate limiting)
        predict_req: PredictRequest with frames per source modality

    Returns:
        PredictResponse with the score (regression) or class probabilities
    """
    bundle = ModelManager.get_instance().get_bundle()
    _check_sources(bundle, predict_req.sources)

    payload = {"variant": bundle.spec.slug(), "sources": predict_req.sources}
    cached = get_cached_prediction(payload)
    if cached:
        return cached

    loop = asyncio.get_event_loop()
    result = await loop.run_in_executor(ml_executor, run_prediction, bundle, predict_req.sources)
    logger.info(f"Prediction ({bundle.spec.id}) for {len(next(iter(predict_req.sources.values())))} frames")

    cache_prediction(payload, result)
    return result


@router.get("/model-info", response_model=ModelInfoResponse)
async def model_info():
    """Describe the served model; 503 when none is loaded."""
    return ModelManager.get_instance().describe()


@router.get("/health", response_model=HealthResponse)
async def health_check():
    """
    Health check endpoint.

    Returns:
        HealthResponse with status and model loading state
    """
    mm = ModelManager.get_instance()
    if not mm.is_loaded:
        return HealthResponse(status="not_ready", model_loaded=False)
    return HealthResponse(status="healthy", model_loaded=True, variant=mm.get_bundle().spec.id)
