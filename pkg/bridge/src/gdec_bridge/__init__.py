"""gdec-bridge: serves paired conditioned/unconditioned log-probability
frames over the NDJSON wire protocol, from scripted tables, the sentinel
conformance model, or a hosted Hugging Face causal LM."""

from .backends import (
    BackendError,
    Descriptor,
    HFBackend,
    ScriptedBackend,
    SentinelBackend,
    write_script,
)
from .server import BridgeConfig, BridgeServer, build_backend, serve

__version__ = "0.1.0"

__all__ = [
    "BackendError",
    "BridgeConfig",
    "BridgeServer",
    "Descriptor",
    "HFBackend",
    "ScriptedBackend",
    "SentinelBackend",
    "__version__",
    "build_backend",
    "serve",
    "write_script",
]
