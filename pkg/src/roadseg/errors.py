"""Exception types shared by all roadseg modules."""


class RoadsegError(Exception):
    """Base class; the CLI maps these to exit status 1."""


class FormatError(RoadsegError):
    """A file does not follow its expected on-disk layout."""


class ShapeError(RoadsegError):
    """Array or weight shapes are inconsistent."""


class ConfigurationError(RoadsegError):
    """A required setting or input is missing or invalid."""


class EmptyContourError(RoadsegError):
    """No road cell projects into the bird's-eye view."""


class GeometryError(RoadsegError):
    """A geometric quantity is undefined (e.g. direction of the origin)."""
