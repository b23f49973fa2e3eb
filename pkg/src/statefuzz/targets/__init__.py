"""Bundled simulated servers and the name -> spec registry."""

from .base import (DEFAULT_HOOKS, IoHooks, PlantedBug, Target, TargetCrash, TargetSpec,
                   UnsupportedMode, parse_hook_env, register_custom_io_hooks)
from .binproto import target_binproto
from .channel import InProcessChannel, SessionResult, TcpLoopbackChannel, make_channel
from .echo import target_echo
from .httpish import target_httpish
from .miniftp import target_miniftp

REGISTRY = {
    "mini-ftp": target_miniftp,
    "echo": target_echo,
    "binproto": target_binproto,
    "httpish": target_httpish,
}


def get_target(name: str) -> TargetSpec:
    try:
        return REGISTRY[name]()
    except KeyError:
        raise ValueError(f"unknown target {name!r}; choose from {', '.join(REGISTRY)}") from None


__all__ = [
    "DEFAULT_HOOKS", "IoHooks", "PlantedBug", "Target", "TargetCrash", "TargetSpec", "UnsupportedMode",
    "parse_hook_env", "register_custom_io_hooks", "InProcessChannel", "TcpLoopbackChannel",
    "SessionResult", "make_channel", "REGISTRY", "get_target", "target_miniftp", "target_echo",
    "target_binproto", "target_httpish",
]
