"""Exception hierarchy shared by all hypermap modules."""


class HypermapError(Exception):
    """Base class for every error raised by this package."""


class DegenerateInput(HypermapError, ValueError):
    """Fewer than three distinct points, or all points collinear."""


class InvalidPolygon(HypermapError, ValueError):
    pass


class NotConvex(InvalidPolygon):
    pass


class EmptyRaster(HypermapError, ValueError):
    """Neither polygon covers a single raster cell center."""


class OutOfBounds(HypermapError, IndexError):
    pass


class BadThresholds(HypermapError, ValueError):
    pass


class GeometryMismatch(HypermapError, ValueError):
    pass


class FormatError(HypermapError, ValueError):
    """A file or archive does not follow its documented layout."""


class UnknownLayer(HypermapError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class DuplicateName(HypermapError, ValueError):
    pass


class MissingLayer(HypermapError, LookupError):
    pass


class OutOfOrderFrame(HypermapError, ValueError):
    pass


class NoProgress(HypermapError, RuntimeError):
    """Exploration revisited an identical (frontier set, pose) state."""

    def __init__(self, message, pose=None):
        super().__init__(message)
        self.pose = pose
