"""Interactive text-to-image retrieval with dialogue-driven query refinement."""

__version__ = "0.1.0"

from .corpus import ImagePool, ImageRecord, load_pool, save_pool
from .metrics import EpisodeLog, bri, evaluate
from .orchestrator import EpisodeConfig, run_batch, run_episode
from .questioner import DialogueContext

__all__ = [
    "DialogueContext",
    "EpisodeConfig",
    "EpisodeLog",
    "ImagePool",
    "ImageRecord",
    "__version__",
    "bri",
    "evaluate",
    "load_pool",
    "run_batch",
    "run_episode",
    "save_pool",
]
