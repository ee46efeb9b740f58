"""Capability-feedback traffic policing with a deterministic simulator.

The library half implements the policing box (per-sender accounting and the
two-queue forwarding algorithm), capability frames, receiver-side feedback,
the port-secret bypass filter, bandwidth-allocation policies, and multi-box
coordination. The simulator half drives those pieces through a deterministic
discrete-event network at desk scale and emits CSV metrics.
"""

__version__ = "0.1.0"
