"""Exception hierarchy shared by all modules.

Every domain failure derives from :class:`SdpseError`; the CLI maps those to
exit code 1.
"""


class SdpseError(Exception):
    pass


class CaseError(SdpseError):
    """Malformed or physically invalid network case."""


class PowerFlowError(SdpseError):
    pass


class ObservabilityError(SdpseError):
    pass


class EstimationError(SdpseError):
    pass


class SolverError(SdpseError):
    pass
