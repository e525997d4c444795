"""Control server: robot session termination, operator API, and storage."""

from sentinel.server.app import ControlServer, ServerConfig

__all__ = ["ControlServer", "ServerConfig"]
