"""One-shot upload protocol: wire format, transports, server, client, costs."""

from .client import TransferSummary, fetch_model, upload
from .cost import CostParams, CostReport, cost_report
from .server import CollabServer, SessionStats
from .transport import (
    FaultPlan,
    LoopbackConnection,
    LoopbackEndpoint,
    TcpConnection,
    TcpEndpoint,
    connect_tcp,
)
from .wire import (
    FRAME_OVERHEAD,
    ErrorCode,
    Frame,
    HelloInfo,
    MessageType,
    read_frame,
    send_frame,
)

__all__ = [
    "CollabServer",
    "CostParams",
    "CostReport",
    "ErrorCode",
    "FRAME_OVERHEAD",
    "FaultPlan",
    "Frame",
    "HelloInfo",
    "LoopbackConnection",
    "LoopbackEndpoint",
    "MessageType",
    "SessionStats",
    "TcpConnection",
    "TcpEndpoint",
    "TransferSummary",
    "connect_tcp",
    "cost_report",
    "fetch_model",
    "read_frame",
    "send_frame",
    "upload",
]
