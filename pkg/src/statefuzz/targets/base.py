"""Simulated server plumbing: the target base class, target specs and
custom I/O hook wiring."""

from __future__ import annotations

import dataclasses
import logging
import re
from dataclasses import dataclass, field
from typing import Callable, Optional

from ..coverage import CoverageMap
from ..inputs import FuzzInput
from ..runtime import RuntimeState

log = logging.getLogger(__name__)


class TargetCrash(Exception):
    """Raised by a target when a planted bug (or a trap) fires."""

    def __init__(self, bug_id: int, site: str):
        super().__init__(f"bug {bug_id} at {site}")
        self.bug_id = bug_id
        self.site = site


class UnsupportedMode(ValueError):
    pass


@dataclass(frozen=True)
class IoHooks:
    recv: frozenset = frozenset({"recv"})
    send: frozenset = frozenset({"send"})


DEFAULT_HOOKS = IoHooks()


@dataclass(frozen=True)
class PlantedBug:
    bug_id: int
    trigger: str


class Target:
    """One server process serving one session.

    Subclasses implement :meth:`start` (allocate long-lived areas, maybe
    send a banner) and :meth:`handle` (process one request).  All network
    I/O goes through :meth:`io` so the runtime hooks fire only for the
    routines selected in :class:`IoHooks`.
    """

    io_routines: tuple[str, ...] = ("recv", "send")

    def __init__(self, rt: RuntimeState, cov: CoverageMap, hooks: IoHooks = DEFAULT_HOOKS):
        self.rt = rt
        self.cov = cov
        self.hooks = hooks
        self.outbox: list[bytes] = []
        self.closed = False
        self._next_addr = 0x1000

    # -- lifecycle ---------------------------------------------------------

    def boot(self) -> list[bytes]:
        self.rt.on_process_start()
        self.start()
        return self.take_replies()

    def deliver(self, data: bytes) -> list[bytes]:
        self.cov.reset_context()
        self.handle(data)
        return self.take_replies()

    def take_replies(self) -> list[bytes]:
        out, self.outbox = self.outbox, []
        return out

    def start(self) -> None:
        pass

    def handle(self, data: bytes) -> None:
        raise NotImplementedError

    # -- services for subclasses -------------------------------------------

    def io(self, routine: str) -> None:
        if routine in self.hooks.recv:
            self.rt.on_receive()
        elif routine in self.hooks.send:
            self.rt.on_send()

    def send(self, payload: bytes, routine: str = "send") -> None:
        self.outbox.append(bytes(payload))
        self.io(routine)

    def malloc(self, size: int, kind: str = "heap") -> tuple[int, bytearray]:
        addr = self._next_addr
        self._next_addr += (size + 0x1F) & ~0xF
        return addr, self.rt.on_allocate(addr, size, bytearray(size), kind)

    def static(self, init: bytes) -> tuple[int, bytearray]:
        addr = self._next_addr
        self._next_addr += (len(init) + 0x1F) & ~0xF
        area = self.rt.register_static(addr, bytearray(len(init)))
        area[:] = init
        return addr, area

    def free(self, addr: int) -> None:
        self.rt.on_free(addr)

    def hit(self, label: str) -> None:
        self.cov.hit(label)

    @staticmethod
    def response_code(reply: bytes) -> Optional[int]:
        return None


@dataclass
class TargetSpec:
    name: str
    factory: Callable[..., Target]
    supports_response_codes: bool = False
    planted_bugs: list[PlantedBug] = field(default_factory=list)
    seeds: list[FuzzInput] = field(default_factory=list)
    dictionary: list[bytes] = field(default_factory=list)
    hooks: IoHooks = DEFAULT_HOOKS

    def instantiate(self, rt: RuntimeState, cov: CoverageMap) -> Target:
        return self.factory(rt, cov, self.hooks)

    def response_code(self, reply: bytes) -> Optional[int]:
        if not self.supports_response_codes:
            raise UnsupportedMode(f"target {self.name} lacks response codes")
        return self.factory.response_code(reply)

    @property
    def io_routines(self) -> tuple[str, ...]:
        return getattr(self.factory, "io_routines", Target.io_routines)


def register_custom_io_hooks(spec: TargetSpec, send_fn_names=(), recv_fn_names=()) -> TargetSpec:
    """Wire the named target routines to the send/receive hooks.

    Empty lists keep the defaults for that direction.
    """
    send_fn_names, recv_fn_names = list(send_fn_names), list(recv_fn_names)
    available = spec.io_routines
    unknown = [n for n in send_fn_names + recv_fn_names if n not in available]
    if unknown:
        raise ValueError(f"unknown hook point(s) {', '.join(unknown)} for target {spec.name}; "
                         f"available: {', '.join(available)}")
    if not send_fn_names and not recv_fn_names:
        return spec
    hooks = IoHooks(
        recv=frozenset(recv_fn_names) if recv_fn_names else spec.hooks.recv,
        send=frozenset(send_fn_names) if send_fn_names else spec.hooks.send,
    )
    return dataclasses.replace(spec, hooks=hooks)


def parse_hook_env(value: str) -> tuple[list[str], list[str]]:
    """Parse ``recv:name,send:name`` pairs (the hook environment variable)."""
    send, recv = [], []
    for item in filter(None, (x.strip() for x in value.split(","))):
        m = re.fullmatch(r"(send|recv):([\w.*]+)", item)
        if not m:
            raise ValueError(f"bad hook entry {item!r}; expected send:<name> or recv:<name>")
        (send if m[1] == "send" else recv).append(m[2])
    return send, recv
