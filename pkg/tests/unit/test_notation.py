import pytest

from app.utils.notation import VARIANT_TITLES, abbreviate, direction, group


@pytest.mark.unit
def test_abbreviations():
    """Known modalities get their conventional letters; others use their initial."""
    assert abbreviate("language") == "T"
    assert abbreviate("Visual") == "V"
    assert abbreviate("audio") == "A"
    assert abbreviate("gaze") == "G"


@pytest.mark.unit
def test_group():
    assert group(["visual"]) == "V"
    assert group(["visual", "acoustic"]) == "[V, A]"


@pytest.mark.unit
def test_trimodal_directions():
    assert direction("e", "visual", "acoustic", "language") == "(V⇄A)→T"
    assert direction("f", "language", "visual", "acoustic", level1="c") == "(T→V, V→T)→A"
    assert direction("h", "language", "visual", "acoustic", inputs=["language"], outputs=["visual", "acoustic"]) == "T→[V, A]"


@pytest.mark.unit
def test_every_variant_has_a_title():
    assert sorted(VARIANT_TITLES) == list("abcdefghi")


@pytest.mark.unit
def test_unknown_variant():
    with pytest.raises(ValueError):
        direction("z", "language", "visual")
