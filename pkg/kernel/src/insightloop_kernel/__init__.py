"""Persistent code-execution kernel: NDJSON exec requests on stdin, one
long-lived namespace, artifact capture, per-request timeouts."""

__version__ = "0.1.0"
