"""Three-party replicated secret sharing over 64-bit reals, with secure
protocols, an MLP trainer and a range-inference analysis."""
from .errors import (ConfigurationError, DegeneratePriorError, DimensionError, DomainError,
                     ExpOverflowError, IntegrityError, ProtocolError, RssError, SessionError)
from .runtime import Cluster, NetProfile, Shared, SoloCluster
from .sharing import AdditiveShare, MultiplicativeShare, PartyContext
from .tensor import RandomRange

__version__ = "0.1.0"

__all__ = ["AdditiveShare", "Cluster", "ConfigurationError", "DegeneratePriorError", "DimensionError",
           "DomainError", "ExpOverflowError", "IntegrityError", "MultiplicativeShare", "NetProfile",
           "PartyContext", "ProtocolError", "RandomRange", "RssError", "SessionError", "Shared",
           "SoloCluster"]
