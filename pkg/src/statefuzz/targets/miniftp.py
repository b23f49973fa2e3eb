"""A small FTP-like server.

The whole session state lives in one context area allocated before the
first request (the analogue of a per-connection context struct on the
stack): authentication progress, user name, data-connection address,
working directory and a transfer scratch slot.  SYST, NOOP and PWD only
read it; USER, PASS, PORT, LIST, MKD, CWD and STOR write it.

Planted bug 1: STOR with a file name longer than the 32-byte slot, sent
while logged in and after a successful PORT, overruns the slot.
"""

from __future__ import annotations

import struct

from ..inputs import FuzzInput
from .base import PlantedBug, Target, TargetCrash, TargetSpec

CTX_SIZE = 256
AUTH, DATA_MODE, WORKERS = 0, 1, 2
SOCK_CTRL, SOCK_DATA = 4, 8
DATA_ADDR, DATA_PORT = 12, 16
USER_NAME, USER_LEN = 32, 32
CWD, CWD_LEN = 64, 64
LAST_DIR, LAST_DIR_LEN = 128, 32
FILE_NAME, FILE_NAME_LEN = 160, 32
TRANSFERS = 192

NONE, USER_OK, LOGGED_IN, LOGIN_FAILED = 0, 1, 2, 3
USERS = {b"anonymous": None, b"ftp": None, b"admin": b"secret"}


class MiniFtp(Target):
    def start(self) -> None:
        self.static(b"miniftp/1.0 root=/srv/ftp maxusers=4\x00")
        self.ctx_addr, self.ctx = self.malloc(CTX_SIZE, kind="stack")
        struct.pack_into("<I", self.ctx, SOCK_CTRL, 3)
        struct.pack_into("<I", self.ctx, SOCK_DATA, 0xFFFFFFFF)
        self._put_str(CWD, CWD_LEN, b"/")
        self.hit("ftp.start")
        self.send(b"220 miniftp ready\r\n")

    def _put_str(self, off: int, size: int, value: bytes) -> None:
        self.ctx[off:off + size] = value[:size].ljust(size, b"\x00")

    def _get_str(self, off: int, size: int) -> bytes:
        return bytes(self.ctx[off:off + size]).split(b"\x00", 1)[0]

    def reply(self, text: bytes) -> None:
        self.send(text + b"\r\n")

    def handle(self, data: bytes) -> None:
        self.io("recv")
        if self.closed:
            return
        # Per-request scratch, released before the reply goes out.
        buf_addr, buf = self.malloc(128)
        buf[:min(len(data), 128)] = data[:128]
        line = data.rstrip(b"\r\n")
        cmd, _, arg = line.partition(b" ")
        cmd = cmd.upper()
        self.free(buf_addr)
        handler = getattr(self, "cmd_" + cmd.decode("latin-1"), None) if cmd.isalpha() else None
        if handler is None:
            self.hit("ftp.unknown")
            self.reply(b"500 Syntax error, command unrecognized")
            return
        self.hit("ftp." + cmd.decode())
        handler(arg)

    @property
    def auth(self) -> int:
        return self.ctx[AUTH]

    def _need_login(self) -> bool:
        if self.auth != LOGGED_IN:
            self.hit("ftp.need_login")
            self.reply(b"530 Please login with USER and PASS")
            return True
        return False

    # -- commands ------------------------------------------------------------

    def cmd_USER(self, arg: bytes) -> None:
        if not arg:
            self.hit("ftp.USER.empty")
            self.reply(b"501 Syntax error in parameters")
            return
        if self.auth == LOGGED_IN:
            self.hit("ftp.USER.relogin")
        self.ctx[AUTH] = USER_OK
        self._put_str(USER_NAME, USER_LEN, arg)
        self.reply(b"331 User " + arg[:32] + b" OK. Password required")

    def cmd_PASS(self, arg: bytes) -> None:
        if self.auth != USER_OK:
            self.hit("ftp.PASS.nouser")
            self.reply(b"503 Login with USER first")
            return
        user = self._get_str(USER_NAME, USER_LEN)
        if user in USERS and (USERS[user] is None or USERS[user] == arg):
            self.hit("ftp.PASS.ok")
            self.ctx[AUTH] = LOGGED_IN
            self.reply(b"230 User logged in, proceed")
        else:
            self.hit("ftp.PASS.bad")
            self.ctx[AUTH] = LOGIN_FAILED
            self.reply(b"530 Login incorrect")

    def cmd_SYST(self, arg: bytes) -> None:
        self.reply(b"215 UNIX Type: L8")

    def cmd_NOOP(self, arg: bytes) -> None:
        self.reply(b"200 NOOP ok")

    def cmd_PWD(self, arg: bytes) -> None:
        if self._need_login():
            return
        self.reply(b'257 "' + self._get_str(CWD, CWD_LEN) + b'" is current directory')

    def cmd_QUIT(self, arg: bytes) -> None:
        self.reply(b"221 Goodbye")
        self.closed = True

    def cmd_PORT(self, arg: bytes) -> None:
        if self._need_login():
            return
        parts = arg.split(b",")
        if len(parts) != 6 or not all(p.isdigit() and int(p) < 256 for p in parts):
            self.hit("ftp.PORT.bad")
            self.reply(b"501 Syntax error in parameters")
            return
        nums = [int(p) for p in parts]
        self.hit("ftp.PORT.ok")
        if nums[:4] != [127, 0, 0, 1]:
            self.hit("ftp.PORT.remote")
        self.ctx[DATA_MODE] = 1
        self.ctx[DATA_ADDR:DATA_ADDR + 4] = bytes(nums[:4])
        struct.pack_into(">H", self.ctx, DATA_PORT, nums[4] * 256 + nums[5])
        self.reply(b"200 PORT command successful")

    def _data_ready(self) -> bool:
        if not self.ctx[DATA_MODE]:
            self.hit("ftp.nodata")
            self.reply(b"425 Use PORT first")
            return False
        return True

    def cmd_LIST(self, arg: bytes) -> None:
        if self._need_login() or not self._data_ready():
            return
        self.hit("ftp.LIST.go")
        self.ctx[WORKERS] = 1
        struct.pack_into("<I", self.ctx, SOCK_DATA, 5)
        self.reply(b"150 Opening data connection")
        self.reply(b"226 Transfer complete")

    def cmd_MKD(self, arg: bytes) -> None:
        if self._need_login():
            return
        if not arg or b"/" in arg:
            self.hit("ftp.MKD.bad")
            self.reply(b"550 Cannot create directory")
            return
        self.hit("ftp.MKD.ok")
        self._put_str(LAST_DIR, LAST_DIR_LEN, arg)
        self.reply(b'257 "' + arg[:LAST_DIR_LEN] + b'" created')

    def cmd_CWD(self, arg: bytes) -> None:
        if self._need_login():
            return
        if not arg:
            self.hit("ftp.CWD.bad")
            self.reply(b"550 No such directory")
            return
        cur = self._get_str(CWD, CWD_LEN)
        new = arg if arg.startswith(b"/") else cur.rstrip(b"/") + b"/" + arg
        if arg not in (b"/", self._get_str(LAST_DIR, LAST_DIR_LEN)) and not arg.startswith(b"/"):
            self.hit("ftp.CWD.missing")
            self.reply(b"550 No such directory")
            return
        self.hit("ftp.CWD.ok")
        self._put_str(CWD, CWD_LEN, new)
        self.reply(b"250 Directory changed")

    def cmd_STOR(self, arg: bytes) -> None:
        if self._need_login() or not self._data_ready():
            return
        if not arg:
            self.hit("ftp.STOR.noarg")
            self.reply(b"501 Syntax error in parameters")
            return
        self.hit("ftp.STOR.go")
        if len(arg) > FILE_NAME_LEN:
            raise TargetCrash(1, "ftp_stor_filename_overflow")
        self._put_str(FILE_NAME, FILE_NAME_LEN, arg)
        self.ctx[TRANSFERS] = (self.ctx[TRANSFERS] + 1) & 0xFF
        self.reply(b"150 Opening data connection")
        self.reply(b"226 Transfer complete")

    @staticmethod
    def response_code(reply: bytes):
        head = reply[:3]
        return int(head) if len(head) == 3 and head.isdigit() else None


SEEDS = [
    [b"USER anonymous\r\n", b"PASS guest\r\n", b"SYST\r\n", b"PWD\r\n",
     b"PORT 127,0,0,1,4,1\r\n", b"LIST\r\n", b"QUIT\r\n"],
    [b"SYST\r\n", b"NOOP\r\n", b"USER anonymous\r\n", b"PASS guest\r\n", b"NOOP\r\n",
     b"MKD docs\r\n", b"CWD docs\r\n", b"PWD\r\n", b"QUIT\r\n"],
    [b"USER anonymous\r\n", b"PASS guest\r\n", b"STOR notes.txt\r\n", b"QUIT\r\n"],
]

DICTIONARY = [b"USER ", b"PASS ", b"SYST", b"NOOP", b"PWD", b"QUIT", b"PORT ", b"LIST",
              b"MKD ", b"CWD ", b"STOR ", b"anonymous", b"\r\n", b"127,0,0,1,"]


def target_miniftp() -> TargetSpec:
    return TargetSpec(
        name="mini-ftp",
        factory=MiniFtp,
        supports_response_codes=True,
        planted_bugs=[PlantedBug(1, "STOR with a name over 32 bytes while logged in, after PORT")],
        seeds=[FuzzInput(s) for s in SEEDS],
        dictionary=list(DICTIONARY),
    )
