"""Error hierarchy shared by the solvers, services and the command line."""


class HybridMemoryError(Exception):
    """Base class for every error raised by the simulator."""

    exit_code: int = 2


class ConfigError(HybridMemoryError):
    """Invalid configuration document or parameter value."""

    exit_code = 1


class SolverError(HybridMemoryError):
    """Numerical failure inside a protocol run."""

    exit_code = 2


class StepControlError(SolverError):
    """The time step is too coarse for the explicit integrator."""


class BlowUpError(SolverError):
    """A field or coherence left its physically bounded range."""


class ScheduleError(SolverError):
    """Segments overlap, leave gaps, or do not tile the run."""


class HandoffError(SolverError):
    """A protocol hand-off would discard live excitation."""


class DetectionError(HybridMemoryError):
    """The detection chain cannot represent the requested signal."""


class AnalysisError(HybridMemoryError):
    """An observable cannot be extracted from the data."""


class FitError(AnalysisError):
    """Least-squares refinement did not converge."""


class MultiLobeError(AnalysisError):
    """Data is flat or has several lobes; use peak finding instead."""
