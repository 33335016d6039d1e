"""Federated training: protocol messages, transports, accounting, round loop."""

from .accounting import CommLedger, client_bytes_per_round, server_bytes_per_round
from .core import (
    ClientState,
    ServerState,
    client_round,
    export_factors,
    init_client,
    init_server,
    run_training,
    server_apply_batch,
    server_round,
)
from .messages import GradientBatch, GradientRecord, ModelDownload, decode, encode, schema_violations
from .transport import InProcessTransport, LogEntry, SocketTransport, Transport, make_transport

__all__ = [
    "ClientState", "ServerState", "client_round", "server_round", "server_apply_batch",
    "init_client", "init_server", "export_factors", "run_training",
    "CommLedger", "client_bytes_per_round", "server_bytes_per_round",
    "ModelDownload", "GradientBatch", "GradientRecord", "encode", "decode", "schema_violations",
    "Transport", "InProcessTransport", "SocketTransport", "LogEntry", "make_transport",
]
