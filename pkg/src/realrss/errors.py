"""Exception hierarchy shared by every layer of the engine."""


class RssError(Exception):
    """Base class for all engine errors."""


class ConfigurationError(RssError, ValueError):
    pass


class DimensionError(RssError, ValueError):
    pass


class DomainError(RssError, ArithmeticError):
    pass


class IntegrityError(RssError):
    """Shares or seed streams that should agree across parties do not."""


class ProtocolError(RssError):
    pass


class SessionError(RssError):
    """Transport failure, timeout, peer disconnect or handshake mismatch."""


class ExpOverflowError(RssError, OverflowError):
    """A share exceeds the exponent guard and would overflow to +Inf."""


class DegeneratePriorError(RssError, ValueError):
    pass
