from .frames import Frame, replay_stats
from .session import Cluster, Party, Shared, SoloCluster
from .stats import RoundStats, StatsTotals
from .transport import InProcessHub, NetProfile, SocketTransport

__all__ = ["Cluster", "Frame", "InProcessHub", "NetProfile", "Party", "RoundStats", "Shared",
           "SocketTransport", "SoloCluster", "StatsTotals", "replay_stats"]
