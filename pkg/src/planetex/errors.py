"""Exception hierarchy shared by the library and the CLI."""


class PlanetexError(Exception):
    """Base class for all library errors (CLI exit code 2)."""


class InputError(PlanetexError):
    """Malformed or missing input data (CLI exit code 1)."""


class GeometryError(PlanetexError):
    pass


class SolverError(PlanetexError):
    pass


class InpaintBackendError(PlanetexError):
    pass
