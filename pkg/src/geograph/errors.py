class GeoGraphError(Exception):
    pass


class DegenerateRay(GeoGraphError, ValueError):
    """Object sits directly below the camera, so it has no image column."""


class HorizonRay(GeoGraphError, ValueError):
    """Pixel ray at or above the horizon; it never reaches the ground."""


class EmptyScene(GeoGraphError, ValueError):
    pass


class EmptyGraph(GeoGraphError, ValueError):
    pass


class DimensionMismatch(GeoGraphError, ValueError):
    pass


class MissingLabels(GeoGraphError, ValueError):
    pass


class MissingScores(GeoGraphError, ValueError):
    pass


class NodeSetMismatch(GeoGraphError, ValueError):
    pass


class NoValidViews(GeoGraphError, ValueError):
    pass


class SchemaError(GeoGraphError, ValueError):
    """Malformed scene corpus or checkpoint; message names the line and field."""
