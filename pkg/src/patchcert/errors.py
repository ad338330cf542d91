"""Exception hierarchy shared across the engine."""


class PatchCertError(Exception):
    """Base class for all engine errors."""


class DimensionMismatchError(PatchCertError):
    """Two grids that must share dimensions do not."""


class GeometryError(PatchCertError):
    """Invalid geometry: patch outside image, patch larger than image, bad K, ..."""


class MaskConstructionError(PatchCertError):
    """A built mask set failed its post-construction soundness check."""


class CoverageError(PatchCertError):
    """A detection mask set does not cover every patch location."""


class InsufficientMasksError(PatchCertError):
    """K < 2NT+1: too few masks for the requested certification."""

    def __init__(self, k, strength, num_patches):
        self.k = k
        self.strength = strength
        self.num_patches = num_patches
        self.required = 2 * num_patches * strength + 1
        super().__init__(
            f"need K >= {self.required} masks for T={strength}, N={num_patches}; got K={k}"
        )


class MetricsError(PatchCertError):
    """Metric requested on an empty or inconsistent aggregate."""


class BackendError(PatchCertError):
    """A demasking or segmentation backend failed."""


class UnsupportedImageError(BackendError):
    """A lookup-based toy backend received an image it has no answer for."""


class BackendDimensionError(BackendError):
    """A backend returned an output whose dimensions do not match the input."""


class ProtocolError(BackendError):
    """The external backend process violated the wire protocol."""


class BackendTimeoutError(BackendError):
    """The external backend process did not answer in time."""
