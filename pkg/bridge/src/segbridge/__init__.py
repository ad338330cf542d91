"""Wire-protocol bridge exposing demasking and segmentation models to the
certification engine."""

from .models import NearestModel, ResizeWrapper, StubModel, load_model
from .server import serve

__version__ = "0.1.0"

__all__ = ["NearestModel", "ResizeWrapper", "StubModel", "load_model", "serve", "__version__"]
