import pytest

from app.core.cache import (
    cache_prediction,
    clear_caches,
    dataset_cache,
    get_cache_key,
    get_cached_prediction,
    prediction_cache,
)


@pytest.mark.unit
def test_cache_key_ignores_key_order():
    a = {"variant": "a_language_visual", "sources": {"language": [[1.0, 2.0]]}}
    b = {"sources": {"language": [[1.0, 2.0]]}, "variant": "a_language_visual"}

    assert get_cache_key(a) == get_cache_key(b)
    assert get_cache_key(a) != get_cache_key(dict(a, variant="b_language_visual"))


@pytest.mark.unit
def test_prediction_round_trip():
    clear_caches()
    payload = {"variant": "a", "sources": {"language": [[0.0]]}}

    assert get_cached_prediction(payload) is None
    cache_prediction(payload, {"prediction": 0.5})
    assert get_cached_prediction(payload) == {"prediction": 0.5}

    clear_caches()
    assert get_cached_prediction(payload) is None


@pytest.mark.unit
def test_clear_caches_empties_both():
    dataset_cache["k"] = object()
    prediction_cache["k"] = {}

    clear_caches()

    assert len(dataset_cache) == 0
    assert len(prediction_cache) == 0
