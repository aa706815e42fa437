"""Threaded TCP server speaking the newline-JSON protocol."""

from __future__ import annotations

import socketserver
import threading
from typing import Optional

from ..simcore import Registry
from .protocol import INVALID_PARAMS, MAX_LINE, encode_response, handle_line


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        registry = self.server.registry
        while True:
            line = self.rfile.readline(MAX_LINE + 1)
            if not line:
                return
            if len(line) > MAX_LINE and not line.endswith(b"\n"):
                # swallow the rest of the oversize line, then answer once
                while True:
                    chunk = self.rfile.readline(MAX_LINE)
                    if not chunk or chunk.endswith(b"\n"):
                        break
                reply = encode_response({"id": None, "error": {"code": INVALID_PARAMS,
                                                               "message": "request too large"}})
            else:
                body = line.rstrip(b"\r\n")
                if not body.strip():
                    continue
                reply = handle_line(body, registry)
            try:
                self.wfile.write(reply.encode("utf-8") + b"\n")
                self.wfile.flush()
            except OSError:
                return


class ControlServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address, registry: Optional[Registry] = None):
        self.registry = registry if registry is not None else Registry()
        super().__init__(address, _Handler)

    @property
    def address(self) -> tuple:
        return self.server_address[:2]


def parse_bind(bind: str) -> tuple:
    host, sep, port = bind.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"bind address must look like host:port, got {bind!r}")
    return host or "127.0.0.1", int(port)


def serve(bind_address, registry: Optional[Registry] = None) -> ControlServer:
    """Bind and return a server; call ``serve_forever`` to run it."""
    if isinstance(bind_address, str):
        bind_address = parse_bind(bind_address)
    return ControlServer(tuple(bind_address), registry)


def serve_in_background(bind_address=("127.0.0.1", 0), registry: Optional[Registry] = None):
    """Start a server on a daemon thread. Returns (server, thread)."""
    server = serve(bind_address, registry)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server, thread
