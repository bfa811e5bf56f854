"""Exception types shared across the toolkit.

Two families matter for the CLI exit-code contract: ``ConfigError`` (bad
input, exit 2) and ``NumericalError`` (a run that went numerically wrong,
exit 3).
"""


class AttractorLabError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(AttractorLabError):
    """Bad user input: unknown system, malformed file, invalid option."""


class NumericalError(AttractorLabError):
    """A numerical failure during an otherwise valid run."""


class UnknownSystem(ConfigError):
    """Requested oracle name is not registered."""


class NumericalBlowup(NumericalError):
    """A step produced a non-finite entry."""

    def __init__(self, index, step=None):
        self.index = int(index)
        self.step = None if step is None else int(step)
        where = f" at timestep {self.step}" if self.step is not None else ""
        super().__init__(f"non-finite value in state component {self.index}{where}")


class DegenerateSeparation(NumericalError):
    """Perturbed and reference trajectories collapsed onto each other."""

    def __init__(self, step):
        self.step = int(step)
        super().__init__(f"separation vector underflowed to zero at step {self.step}")


class RankCollapse(NumericalError):
    """Re-orthonormalization failed: a direction became linearly dependent."""

    def __init__(self, step, vector_index):
        self.step = int(step)
        self.vector_index = int(vector_index)
        super().__init__(
            f"orthonormalization residual vanished for vector {self.vector_index} "
            f"at step {self.step}"
        )


class MalformedWeights(ConfigError):
    """Weight file failed magic, shape or size validation."""


class VersionMismatch(ConfigError):
    """Weight file declares an unsupported format version."""


class UnsupportedUpdateRate(ConfigError):
    """Weight file requests a stochastic update rate; engine is deterministic-only."""


class TooShort(ConfigError):
    """Trajectory has too few samples for the requested analysis."""


class InsufficientRank(NumericalError):
    """Retained PCA components cannot reach the requested variance threshold."""

    def __init__(self, achieved, requested):
        self.achieved = float(achieved)
        self.requested = float(requested)
        super().__init__(
            f"{achieved:.6f} of variance explained by all retained components, "
            f"below requested {requested:.6f}"
        )
