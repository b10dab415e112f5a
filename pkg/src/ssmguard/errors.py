"""Exception hierarchy.

Every error carries a short machine-greppable ``code`` so the CLI can print a
single ``error[CODE]: message`` line.
"""


class SsmGuardError(Exception):
    code = "E_DOMAIN"


class MalformedMetadataError(SsmGuardError):
    code = "E_METADATA"


class DimensionMismatchError(SsmGuardError):
    code = "E_DIMENSION"


class UnsupportedDownscaleError(SsmGuardError):
    code = "E_DOWNSCALE"


class PreconditionError(SsmGuardError):
    code = "E_PRECONDITION"


class AnnotationParseError(SsmGuardError):
    code = "E_ANNOTATION"


class KinematicsError(SsmGuardError):
    code = "E_KINEMATICS"


class GjkDegeneracyError(SsmGuardError):
    """Raised when GJK hits its iteration cap.

    ``best_distance`` holds the smallest distance seen before giving up.
    """

    code = "E_GJK"

    def __init__(self, message, best_distance=float("nan")):
        super().__init__(message)
        self.best_distance = best_distance


class AlignmentError(SsmGuardError):
    code = "E_ALIGN"


class SyncError(SsmGuardError):
    code = "E_SYNC"


class ScenarioError(SsmGuardError):
    code = "E_SCENARIO"


class ConfigError(SsmGuardError):
    code = "E_CONFIG"
