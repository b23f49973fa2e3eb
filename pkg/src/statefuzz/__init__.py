"""Stateful greybox fuzzing of message-oriented servers, with protocol
states inferred from snapshots of long-lived memory."""

__version__ = "0.1.0"
