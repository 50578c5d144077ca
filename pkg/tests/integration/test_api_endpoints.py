import pytest


def _frames(width, length=4, value=0.1):
    return [[value * (t + 1)] * width for t in range(length)]


@pytest.mark.integration
def test_root_endpoint(test_client):
    """Root endpoint returns API info."""
    response = test_client.get("/")

    assert response.status_code == 200
    assert response.json()["health"] == "/api/v1/health"


@pytest.mark.integration
def test_health_without_model(test_client):
    """Health reports not_ready until a checkpoint is loaded."""
    response = test_client.get("/api/v1/health")

    assert response.status_code == 200
    assert response.json() == {"status": "not_ready", "model_loaded": False, "variant": None}


@pytest.mark.integration
def test_health_with_model(loaded_client):
    data = loaded_client.get("/api/v1/health").json()

    assert data["status"] == "healthy"
    assert data["model_loaded"] is True
    assert data["variant"] == "a"


@pytest.mark.integration
def test_model_info_without_model(test_client):
    assert test_client.get("/api/v1/model-info").status_code == 503


@pytest.mark.integration
def test_model_info(loaded_client):
    response = loaded_client.get("/api/v1/model-info")

    assert response.status_code == 200
    data = response.json()
    assert data["variant"] == "a"
    assert data["direction"] == "T⇄V"
    assert data["input_modalities"] == {"language": 3}
    assert data["task"] == "regression"


@pytest.mark.integration
def test_predict_success(loaded_client):
    """Source frames alone give a regression score with its sign class."""
    response = loaded_client.post("/api/v1/predict", json={"sources": {"language": _frames(3)}})

    assert response.status_code == 200
    data = response.json()
    assert isinstance(data["prediction"], float)
    assert data["sentiment"] == ("positive" if data["prediction"] >= 0 else "negative")
    assert data["variant"] == "a"


@pytest.mark.integration
def test_predict_is_repeatable(loaded_client):
    """A repeated request returns the same (cached) prediction."""
    payload = {"sources": {"language": _frames(3, value=0.3)}}

    first = loaded_client.post("/api/v1/predict", json=payload).json()
    second = loaded_client.post("/api/v1/predict", json=payload).json()

    assert first == second


@pytest.mark.integration
def test_predict_rejects_target_modality(loaded_client):
    """Target frames are not an input of the served model."""
    payload = {"sources": {"language": _frames(3), "visual": _frames(2)}}

    response = loaded_client.post("/api/v1/predict", json=payload)

    assert response.status_code == 400
    assert response.json()["unexpected"] == ["visual"]


@pytest.mark.integration
def test_predict_rejects_wrong_width(loaded_client):
    response = loaded_client.post("/api/v1/predict", json={"sources": {"language": _frames(5)}})

    assert response.status_code == 400
    assert response.json()["error"] == "ShapeMismatchException"


@pytest.mark.integration
@pytest.mark.parametrize("payload", [
    {"sources": {"language": _frames(3)}, "labels": [1.0]},
    {"sources": {}},
    {"sources": {"language": [[0.1, 0.2, 0.3], [0.1]]}},
    {"sources": {"language": []}},
])
def test_predict_validation_errors(loaded_client, payload):
    """Malformed bodies are rejected by request validation."""
    response = loaded_client.post("/api/v1/predict", json=payload)

    assert response.status_code == 422


@pytest.mark.integration
def test_predict_without_model(test_client):
    response = test_client.post("/api/v1/predict", json={"sources": {"language": _frames(3)}})

    assert response.status_code == 503
