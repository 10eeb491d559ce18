"""Exception types shared across the library."""


class SpinvoError(Exception):
    """Base class for library-specific failures."""


class BehindCameraError(SpinvoError):
    """A point projected with non-positive camera-frame depth."""


class DegenerateGeometryError(SpinvoError):
    """Geometric configuration too degenerate to solve (zero baseline, collinear points, ...)."""


class CheiralityError(SpinvoError):
    """A triangulated point landed behind one of the cameras."""


class AmbiguousDecompositionError(SpinvoError):
    """Essential-matrix decomposition could not single out one candidate."""


class InitializationFailure(SpinvoError):
    """Two-view bootstrap found no model with enough inlier support."""


class OptimizationFailure(SpinvoError):
    """Nonlinear refinement produced non-finite costs and cannot continue."""


class BackendUnavailableError(SpinvoError):
    """An interpolation backend timed out, exited, or reported an error."""


class ProtocolError(SpinvoError):
    """Frame-exchange reply violated the wire format (bad magic, wrong dims)."""


class ParseError(SpinvoError):
    """A dataset file could not be parsed; message names file and line."""


class GenerationError(SpinvoError):
    """Synthetic scene config is inconsistent with its own camera path."""


class InsufficientOverlapError(SpinvoError):
    """Two trajectories share too few associable timestamps."""
