from pydantic import BaseModel, ConfigDict, Field, field_validator
from typing import Dict, List, Optional
import math


class PredictRequest(BaseModel):
    """
    Request schema for source-only prediction.

    Only the served model's input modalities are accepted; target
    modalities have no field.
    """
    model_config = ConfigDict(extra="forbid")

    sources: Dict[str, List[List[float]]] = Field(
        ...,
        description="Frames (rows are timesteps) keyed by source modality name"
    )

    @field_validator('sources')
    @classmethod
    def validate_sources(cls, v: Dict[str, List[List[float]]]) -> Dict[str, List[List[float]]]:
        """
        Validate the frame matrices.

        Checks:
        - At least one modality
        - Every modality has at least one frame
        - Rows of one modality share a width
        - All modalities share a length (the frames are aligned)
        - Every value is finite

        Raises:
            ValueError: If validation fails
        """
        if not v:
            raise ValueError('At least one source modality is required')

        lengths = set()
        for name, frames in v.items():
            if not frames:
                raise ValueError(f'Modality "{name}" has no frames')
            widths = {len(row) for row in frames}
            if len(widths) != 1 or 0 in widths:
                raise ValueError(f'Modality "{name}" has ragged or empty rows')
            if not all(math.isfinite(x) for row in frames for x in row):
                raise ValueError(f'Modality "{name}" contains non-finite values')
            lengths.add(len(frames))

        if len(lengths) != 1:
            raise ValueError(f'Source modalities must be aligned, got lengths {sorted(lengths)}')

        return v


class PredictResponse(BaseModel):
    """Response schema for a prediction."""
    task: str
    prediction: Optional[float] = Field(None, description="Regression output (sentiment score)")
    sentiment: Optional[str] = Field(None, description='"positive" when the score is >= 0, else "negative"')
    probabilities: Optional[List[float]] = Field(None, description="Class probabilities (classification)")
    predicted_class: Optional[int] = None
    variant: str
    direction: str


class ModelInfoResponse(BaseModel):
    """Description of the served model."""
    checkpoint: str
    variant: str
    title: str
    direction: str
    task: str
    num_classes: Optional[int] = None
    input_modalities: Dict[str, int]
    parameters: int


class HealthResponse(BaseModel):
    """Health check response."""
    status: str
    model_loaded: bool
    variant: Optional[str] = None

    model_config = ConfigDict(protected_namespaces=())
