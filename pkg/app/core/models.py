import logging
from pathlib import Path
from typing import Any, Dict, Optional

from app.core.cache import clear_caches
from app.core.config import settings
from app.core.exceptions import AppBaseException, ModelNotLoadedException
from app.services.mctn import ModelBundle, load_bundle

logger = logging.getLogger(__name__)


class ModelManager:
    """
    Singleton holding the bundle served by the inference API.
    The checkpoint is loaded once and reused across requests.
    """
    _instance: Optional['ModelManager'] = None
    _bundle: Optional[ModelBundle] = None
    _checkpoint: Optional[Path] = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    @classmethod
    def get_instance(cls) -> 'ModelManager':
        """Get the singleton instance."""
        if cls._instance is None:
            cls._instance = cls()
        return cls._instance

    @classmethod
    def reset(cls) -> None:
        """Forget the loaded bundle (tests and checkpoint reloads)."""
        if cls._instance is not None:
            cls._instance._bundle = None
            cls._instance._checkpoint = None

    def load_bundle(self, checkpoint: Optional[Path] = None) -> ModelBundle:
        """
        Load a checkpoint and make it the served bundle.

        Raises:
            CheckpointIntegrityException: On a corrupt or missing checkpoint
            TopologyMismatchException: If the tensors do not fit the topology
        """
        checkpoint = Path(checkpoint or settings.served_checkpoint)
        logger.info(f"Loading checkpoint from: {checkpoint}")
        try:
            bundle = load_bundle(checkpoint)
        except AppBaseException:
            raise
        except Exception as e:
            logger.error(f"Failed to load checkpoint: {str(e)}", exc_info=True)
            raise ModelNotLoadedException(
                f"Failed to load checkpoint: {str(e)}",
                details={"error": str(e), "error_type": type(e).__name__}
            )
        self._bundle = bundle
        self._checkpoint = checkpoint
        clear_caches()
        logger.info(f"Serving variant ({bundle.spec.id}) {bundle.spec.direction}, {bundle.parameter_count()} parameters")
        return bundle

    @property
    def is_loaded(self) -> bool:
        return self._bundle is not None

    def get_bundle(self) -> ModelBundle:
        """Get the served bundle."""
        if self._bundle is None:
            raise ModelNotLoadedException(
                "No model loaded. Start the server with a trained checkpoint.",
                details={"checkpoint": str(settings.served_checkpoint)}
            )
        return self._bundle

    def describe(self) -> Dict[str, Any]:
        bundle = self.get_bundle()
        return {
            "checkpoint": str(self._checkpoint),
            "variant": bundle.spec.id,
            "title": bundle.spec.title,
            "direction": bundle.spec.direction,
            "task": bundle.task,
            "num_classes": bundle.config.num_classes,
            "input_modalities": {m: bundle.dims[m] for m in bundle.input_modalities},
            "parameters": bundle.parameter_count(),
        }
