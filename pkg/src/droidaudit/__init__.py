"""Audit tooling for Android Binder IPC and syscall traces."""

__version__ = "0.1.0"
