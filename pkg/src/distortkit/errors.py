"""Exception types shared across the toolkit."""


class DistortkitError(Exception):
    pass


class PointBehindCamera(DistortkitError, ValueError):
    """A point sits at or behind the camera plane (z + Tz <= eps)."""


class EmptyRaster(DistortkitError):
    """Nothing of the body was rasterized inside the image."""


class DegenerateConfiguration(DistortkitError, ValueError):
    pass


class DegenerateBody(DegenerateConfiguration):
    pass


class ShapeMismatch(DistortkitError, ValueError):
    pass
