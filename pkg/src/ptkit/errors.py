"""Exception types shared across the toolkit."""


class ToolkitError(Exception):
    """Base class for domain errors; the CLI maps these to exit code 1."""


# --- checkpoint container ---

class MalformedHeader(ToolkitError):
    pass


class OverlappingOffsets(ToolkitError):
    pass


class TruncatedPayload(ToolkitError):
    pass


class NonFiniteValue(ToolkitError):
    pass


class IoFailure(ToolkitError):
    pass


# --- merge engine ---

class IncompatibleCheckpoints(ToolkitError):
    pass


class ZeroWeightSum(ToolkitError):
    pass


class InvalidDensity(ToolkitError):
    pass


class ProbabilityOutOfRange(ToolkitError):
    pass


class InvalidConsensusK(ToolkitError):
    pass


class InvalidParameter(ToolkitError):
    pass


# --- recipes ---

class RecipeSyntaxError(ToolkitError):
    pass


class UnknownMethod(ToolkitError):
    pass


class DuplicateNodeId(ToolkitError):
    pass


class UnknownField(ToolkitError):
    pass


class InvalidRecipe(ToolkitError):
    """Raised when execution is attempted on a recipe that fails validation."""


class MissingInput(ToolkitError):
    pass


# --- training plans ---

class BudgetInfeasible(ToolkitError):
    pass


class RatioSumInvalid(ToolkitError):
    pass


class OutOfRange(ToolkitError):
    pass


# --- corpus pipeline ---

class EmptyCorpus(ToolkitError):
    pass


class SingleLabel(ToolkitError):
    pass


class EmptyText(ToolkitError):
    pass


# --- preference data ---

class NotEnoughResponses(ToolkitError):
    pass
