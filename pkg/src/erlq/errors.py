"""Exception hierarchy shared by every module."""


class ErlqError(Exception):
    """Base class; the CLI maps these to exit code 2."""


class DegenerateCovarianceError(ErlqError):
    def __init__(self, msg="degenerate covariance"):
        super().__init__(msg)


class InadmissibleError(ErlqError):
    """A policy left the admissible set (gamma * V_K >= 1 or Sigma not SPD)."""

    def __init__(self, msg="inadmissible gain (divergent series)", policy=None, previous=None):
        super().__init__(msg)
        self.policy = policy
        self.previous = previous


class RolloutDivergedError(ErlqError):
    def __init__(self, step, index=None):
        where = f" (rollout {index})" if index is not None else ""
        super().__init__(f"trajectory diverged at step {step}{where}")
        self.step = step
        self.index = index


class RiccatiError(ErlqError):
    pass


class StepSizeError(ErlqError):
    pass


class SmoothingRadiusError(ErlqError):
    def __init__(self, msg="smoothing radius exceeds admissibility margin"):
        super().__init__(msg)


class ConfigError(ErlqError):
    """Bad or incomplete configuration; the CLI maps this to exit code 1."""
