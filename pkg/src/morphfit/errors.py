"""Exception hierarchy shared by all morphfit modules."""


class MorphfitError(Exception):
    """Base class for every error raised by morphfit."""

    kind = "error"

    def to_record(self):
        return {"type": type(self).__name__, "kind": self.kind, "message": str(self)}


class DimensionError(MorphfitError, ValueError):
    kind = "dimension"


class ParameterError(MorphfitError, ValueError):
    kind = "parameter"


class ModelFormatError(MorphfitError):
    """A model or cascade container failed validation.

    ``field`` names the offending header entry or array.
    """

    kind = "parse"

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")

    def to_record(self):
        rec = super().to_record()
        rec["field"] = self.field
        return rec


class InsufficientPointsError(MorphfitError, ValueError):
    kind = "insufficient-points"


class DegenerateConfigurationError(MorphfitError, ValueError):
    kind = "degenerate-configuration"

    def __init__(self, message, rank=None):
        self.rank = rank
        if rank is not None:
            message = f"{message} (rank {rank})"
        super().__init__(message)


class ConvergenceError(MorphfitError, RuntimeError):
    kind = "convergence"

    def __init__(self, message, last_iterate=None):
        self.last_iterate = last_iterate
        super().__init__(message)


class LandmarkMappingError(MorphfitError, KeyError):
    kind = "mapping"

    def __init__(self, name):
        self.name = name
        super().__init__(f"landmark {name!r} has no vertex in the model")

    def __str__(self):
        return self.args[0]


class RankError(MorphfitError, ValueError):
    kind = "rank"


class NumericalError(MorphfitError, FloatingPointError):
    kind = "numerical-failure"


class ConnectivityError(MorphfitError, ValueError):
    kind = "connectivity"

    def __init__(self, n_components):
        self.n_components = n_components
        super().__init__(f"mesh is not connected: {n_components} components")


class ChartMismatchError(MorphfitError, ValueError):
    kind = "chart-mismatch"


class InsufficientDataError(MorphfitError, ValueError):
    kind = "insufficient-data"


class IdMismatchError(MorphfitError, ValueError):
    kind = "id-mismatch"

    def __init__(self, difference):
        self.difference = sorted(difference)
        super().__init__(f"id sets differ: {self.difference}")


class MissingAnnotationError(MorphfitError, ValueError):
    kind = "missing-annotation"

    def __init__(self, ids):
        self.ids = list(ids)
        super().__init__(f"no yaw annotation for ids: {self.ids}")
