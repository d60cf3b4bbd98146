"""RGB-thermal semantic communication for segmentation over a binary symmetric channel."""

__version__ = "0.1.0"

from .config import ConfigError, RunConfig, load_config  # noqa: E402
from .model import SemComSystem, build_model  # noqa: E402

__all__ = ["ConfigError", "RunConfig", "SemComSystem", "build_model", "load_config", "__version__"]
