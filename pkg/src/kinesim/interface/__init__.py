"""CLI and TCP control protocol."""

from .protocol import MAX_LINE, handle_line, handle_request
from .server import ControlServer, serve, serve_in_background

__all__ = ["MAX_LINE", "ControlServer", "handle_line", "handle_request", "serve", "serve_in_background"]
