"""
Modality abbreviations and translation-direction strings as they appear in
ablation tables: "T⇄V", "(T⇄V)→A", "[T→V, V→T]", "[V, A]→T".
"""
from typing import Iterable, List, Optional

CYCLE = "⇄"
ARROW = "→"

KNOWN_ABBREVIATIONS = {
    "language": "T",
    "text": "T",
    "visual": "V",
    "vision": "V",
    "acoustic": "A",
    "audio": "A",
}

VARIANT_TITLES = {
    "a": "MCTN Bimodal",
    "b": "Simple Bimodal",
    "c": "No-Cycle Bimodal",
    "d": "Double Bimodal",
    "e": "MCTN Trimodal",
    "f": "Simple Trimodal",
    "g": "Double Trimodal",
    "h": "Concat Trimodal",
    "i": "Paired Trimodal",
}


def abbreviate(modality: str) -> str:
    """Single-letter tag for a modality name (language→T, visual→V, acoustic→A)."""
    return KNOWN_ABBREVIATIONS.get(modality.lower(), modality[:1].upper())


def group(modalities: Iterable[str]) -> str:
    """One modality renders bare, several render as a bracketed list."""
    tags: List[str] = [abbreviate(m) for m in modalities]
    if len(tags) == 1:
        return tags[0]
    return "[" + ", ".join(tags) + "]"


def direction(
    variant: str,
    source: str,
    target1: str,
    target2: Optional[str] = None,
    inputs: Optional[List[str]] = None,
    outputs: Optional[List[str]] = None,
    level1: str = "b",
) -> str:
    s, t1 = abbreviate(source), abbreviate(target1)
    t2 = abbreviate(target2) if target2 else None
    if variant == "a":
        return f"{s}{CYCLE}{t1}"
    if variant == "b":
        return f"{s}{ARROW}{t1}"
    if variant == "c":
        return f"{s}{ARROW}{t1}, {t1}{ARROW}{s}"
    if variant == "d":
        return f"[{s}{ARROW}{t1}, {t1}{ARROW}{s}]"
    if variant == "e":
        return f"({s}{CYCLE}{t1}){ARROW}{t2}"
    if variant == "f":
        if level1 == "c":
            return f"({s}{ARROW}{t1}, {t1}{ARROW}{s}){ARROW}{t2}"
        return f"({s}{ARROW}{t1}){ARROW}{t2}"
    if variant == "g":
        return f"[{s}{ARROW}{t1}, {t1}{ARROW}{s}]{ARROW}{t2}"
    if variant == "h":
        return f"{group(inputs or [source, target1])}{ARROW}{group(outputs or [target2])}"
    if variant == "i":
        return f"[{s}{ARROW}{t1}, {s}{ARROW}{t2}]"
    raise ValueError(f"Unknown variant '{variant}'")
