"""FIX 4.2 tag=value codec for the order-entry subset.

Messages are held without BodyLength(9) and CheckSum(10); those two fields
are computed by :func:`serialize` and verified then stripped by :func:`parse`,
so ``parse(serialize(m)) == m``.
"""

from __future__ import annotations

import datetime as _dt
from dataclasses import dataclass, replace
from enum import Enum, IntEnum
from typing import Iterable, Iterator, Optional, Union

SOH = b"\x01"
BEGIN_STRING = b"FIX.4.2"
DEFAULT_HEARTBEAT_S = 30


class Tag(IntEnum):
    BeginString = 8
    BodyLength = 9
    MsgType = 35
    SenderCompID = 49
    TargetCompID = 56
    MsgSeqNum = 34
    SendingTime = 52
    CheckSum = 10
    AvgPx = 6
    ClOrdID = 11
    CumQty = 14
    ExecID = 17
    ExecTransType = 20
    LastPx = 31
    LastQty = 32
    OrderID = 37
    OrderQty = 38
    OrdStatus = 39
    OrdType = 40
    OrigClOrdID = 41
    Price = 44
    Side = 54
    Symbol = 55
    Text = 58
    TransactTime = 60
    EncryptMethod = 98
    CxlRejReason = 102
    HeartBtInt = 108
    ExecType = 150
    LeavesQty = 151
    CxlRejResponseTo = 434


class MsgType(str, Enum):
    LOGON = "A"
    HEARTBEAT = "0"
    LOGOUT = "5"
    NEW_ORDER_SINGLE = "D"
    EXECUTION_REPORT = "8"
    ORDER_CANCEL_REQUEST = "F"
    ORDER_CANCEL_REJECT = "9"
    UNSUPPORTED = "?"

    @classmethod
    def classify(cls, raw: bytes) -> "MsgType":
        try:
            kind = cls(raw.decode("ascii"))
        except (ValueError, UnicodeDecodeError):
            return cls.UNSUPPORTED
        return kind


class ExecType(str, Enum):
    NEW = "0"
    PARTIAL_FILL = "1"
    FILL = "2"
    CANCELED = "4"
    REJECTED = "8"


class OrdStatus(str, Enum):
    NEW = "0"
    PARTIALLY_FILLED = "1"
    FILLED = "2"
    CANCELED = "4"
    REJECTED = "8"


class FixError(Exception):
    """Base class for codec and session failures."""


class StructureError(FixError):
    """Required tag missing or header/trailer out of place."""


class EncodingError(FixError):
    """A value cannot be put on the wire."""


class MalformedFieldError(FixError):
    """A field is not ``<positive int>=<non-empty value>``."""


class BodyLengthError(FixError):
    pass


class ChecksumError(FixError):
    pass


class SessionError(FixError):
    """Session-layer violation (not logged on, bad sequence number)."""


Value = Union[bytes, str, int]


def _to_bytes(value: Value) -> bytes:
    if isinstance(value, bytes):
        return value
    if isinstance(value, Enum):
        value = value.value
    return str(value).encode("ascii")


@dataclass(frozen=True)
class FixMessage:
    """Ordered (tag, value) fields, excluding BodyLength and CheckSum."""

    fields: tuple[tuple[int, bytes], ...]

    @classmethod
    def build(cls, msg_type: Union[MsgType, str], *pairs: tuple[int, Value]) -> "FixMessage":
        body = [(int(Tag.BeginString), BEGIN_STRING), (int(Tag.MsgType), _to_bytes(msg_type))]
        body.extend((int(tag), _to_bytes(value)) for tag, value in pairs)
        return cls(tuple(body))

    def get(self, tag: int) -> Optional[bytes]:
        for t, v in self.fields:
            if t == tag:
                return v
        return None

    def get_str(self, tag: int) -> Optional[str]:
        v = self.get(tag)
        return None if v is None else v.decode("ascii", "replace")

    def get_int(self, tag: int) -> Optional[int]:
        v = self.get(tag)
        return None if v is None else int(v)

    def require(self, tag: int) -> bytes:
        v = self.get(tag)
        if v is None:
            raise StructureError(f"missing tag {tag} ({_tag_name(tag)})")
        return v

    def with_fields(self, *pairs: tuple[int, Value]) -> "FixMessage":
        """Copy with extra fields inserted after MsgType (header position)."""
        head = list(self.fields[:2])
        extra = [(int(t), _to_bytes(v)) for t, v in pairs]
        return replace(self, fields=tuple(head + extra + list(self.fields[2:])))

    @property
    def kind(self) -> MsgType:
        return MsgType.classify(self.require(Tag.MsgType))

    @property
    def msg_type(self) -> str:
        return self.require(Tag.MsgType).decode("ascii", "replace")

    @property
    def sender(self) -> Optional[str]:
        return self.get_str(Tag.SenderCompID)

    @property
    def target(self) -> Optional[str]:
        return self.get_str(Tag.TargetCompID)

    @property
    def seq_num(self) -> Optional[int]:
        return self.get_int(Tag.MsgSeqNum)

    @property
    def sending_time(self) -> Optional[str]:
        return self.get_str(Tag.SendingTime)

    @property
    def cl_ord_id(self) -> Optional[str]:
        return self.get_str(Tag.ClOrdID)

    @property
    def orig_cl_ord_id(self) -> Optional[str]:
        return self.get_str(Tag.OrigClOrdID)

    @property
    def order_id(self) -> Optional[str]:
        return self.get_str(Tag.OrderID)

    @property
    def side(self) -> Optional[str]:
        return self.get_str(Tag.Side)

    @property
    def price(self) -> Optional[int]:
        return self.get_int(Tag.Price)

    @property
    def order_qty(self) -> Optional[int]:
        return self.get_int(Tag.OrderQty)

    @property
    def symbol(self) -> Optional[str]:
        return self.get_str(Tag.Symbol)

    @property
    def exec_type(self) -> Optional[str]:
        return self.get_str(Tag.ExecType)

    @property
    def ord_status(self) -> Optional[str]:
        return self.get_str(Tag.OrdStatus)

    @property
    def last_px(self) -> Optional[int]:
        return self.get_int(Tag.LastPx)

    @property
    def last_qty(self) -> Optional[int]:
        return self.get_int(Tag.LastQty)

    def __str__(self) -> str:
        return render(serialize(self))


def _tag_name(tag: int) -> str:
    try:
        return Tag(tag).name
    except ValueError:
        return "?"


def checksum(data: bytes) -> int:
    return sum(data) % 256


def serialize(message: FixMessage) -> bytes:
    """Encode ``message`` with computed BodyLength and CheckSum."""
    fields = message.fields
    if len(fields) < 2 or fields[0][0] != Tag.BeginString:
        raise StructureError("missing tag 8 (BeginString) in first position")
    if fields[1][0] != Tag.MsgType:
        raise StructureError("missing tag 35 (MsgType) in second position")
    parts = []
    for tag, value in fields[1:]:
        if tag in (Tag.BodyLength, Tag.CheckSum, Tag.BeginString):
            raise StructureError(f"tag {tag} is computed by the codec and may not appear in the body")
        if tag <= 0:
            raise EncodingError(f"tag {tag} is not a positive integer")
        if not value:
            raise EncodingError(f"tag {tag} has an empty value")
        if SOH in value:
            raise EncodingError(f"tag {tag} value contains the SOH delimiter")
        parts.append(b"%d=%s\x01" % (tag, value))
    body = b"".join(parts)
    begin = fields[0][1]
    if not begin or SOH in begin:
        raise EncodingError("bad BeginString value")
    head = b"8=%s\x019=%d\x01" % (begin, len(body))
    msg = head + body
    return msg + b"10=%03d\x01" % checksum(msg)


def _split_field(raw: bytes) -> tuple[int, bytes]:
    tag_b, eq, value = raw.partition(b"=")
    if not eq or not value or not tag_b.isdigit() or tag_b.startswith(b"0"):
        raise MalformedFieldError(f"malformed field {raw!r}")
    return int(tag_b), value


def parse(wire: bytes) -> FixMessage:
    """Decode one complete wire message.

    Framing, BodyLength and CheckSum are verified before any field is
    interpreted. An unknown MsgType still parses; see :attr:`FixMessage.kind`.
    """
    if not wire.startswith(b"8="):
        raise StructureError("message does not start with tag 8")
    end8 = wire.find(SOH)
    if end8 < 0:
        raise StructureError("unterminated BeginString")
    begin = wire[2:end8]
    if not begin:
        raise MalformedFieldError("empty BeginString")
    end9 = wire.find(SOH, end8 + 1)
    if end9 < 0 or wire[end8 + 1:end8 + 3] != b"9=":
        raise StructureError("tag 9 (BodyLength) must follow BeginString")
    length_b = wire[end8 + 3:end9]
    if not length_b.isdigit():
        raise MalformedFieldError(f"bad BodyLength {length_b!r}")
    body_start = end9 + 1
    # trailer is exactly "10=NNN\x01"
    trailer_start = len(wire) - 7
    if trailer_start < body_start or wire[trailer_start:trailer_start + 3] != b"10=" or not wire.endswith(SOH):
        raise StructureError("message does not end with a 10=NNN trailer")
    if int(length_b) != trailer_start - body_start:
        raise BodyLengthError(f"BodyLength {int(length_b)} != actual {trailer_start - body_start}")
    digits = wire[trailer_start + 3:trailer_start + 6]
    if not digits.isdigit():
        raise MalformedFieldError(f"bad CheckSum value {digits!r}")
    expected = checksum(wire[:trailer_start])
    if int(digits) != expected:
        raise ChecksumError(f"CheckSum {digits.decode()} != computed {expected:03d}")

    body = wire[body_start:trailer_start]
    if not body.endswith(SOH):
        raise MalformedFieldError("body not SOH-terminated")
    fields = [(int(Tag.BeginString), begin)]
    for raw in body[:-1].split(SOH):
        tag, value = _split_field(raw)
        if tag in (Tag.BeginString, Tag.BodyLength, Tag.CheckSum):
            raise StructureError(f"tag {tag} repeated inside the body")
        fields.append((tag, value))
    if len(fields) < 2 or fields[1][0] != Tag.MsgType:
        raise StructureError("tag 35 (MsgType) must be the third field")
    return FixMessage(tuple(fields))


def render(wire: bytes) -> str:
    """Human-readable form for logs."""
    return wire.replace(SOH, b"|").decode("ascii", "replace")


def format_sending_time(epoch_us: int) -> str:
    t = _dt.datetime(1970, 1, 1) + _dt.timedelta(microseconds=epoch_us)
    return t.strftime("%Y%m%d-%H:%M:%S.") + f"{t.microsecond // 1000:03d}"


class FixStreamBuffer:
    """Splits a TCP byte stream into complete wire messages."""

    def __init__(self) -> None:
        self._buf = bytearray()

    def feed(self, data: bytes) -> Iterator[bytes]:
        self._buf.extend(data)
        while True:
            wire = self._next()
            if wire is None:
                return
            yield wire

    def _next(self) -> Optional[bytes]:
        buf = self._buf
        start = buf.find(b"8=")
        if start < 0:
            del buf[:max(0, len(buf) - 1)]
            return None
        if start:
            del buf[:start]
        end8 = buf.find(SOH)
        if end8 < 0:
            return None
        end9 = buf.find(SOH, end8 + 1)
        if end9 < 0:
            return None
        length_b = bytes(buf[end8 + 3:end9])
        if buf[end8 + 1:end8 + 3] != b"9=" or not length_b.isdigit():
            # garbage in front of a real header: resync past it
            del buf[:2]
            return self._next()
        total = end9 + 1 + int(length_b) + 7
        if len(buf) < total:
            return None
        wire = bytes(buf[:total])
        del buf[:total]
        return wire


@dataclass(frozen=True)
class SessionState:
    """Per-session sequence bookkeeping; values are replaced, never mutated."""

    sender: str
    target: str
    out_seq: int = 0
    in_seq: int = 0
    logged_on: bool = False
    heartbeat_s: int = DEFAULT_HEARTBEAT_S


def next_outbound(session: SessionState, message: FixMessage, now_us: int) -> tuple[bytes, SessionState]:
    """Stamp header fields on ``message`` and serialize it."""
    kind = message.kind
    if not session.logged_on and kind not in (MsgType.LOGON, MsgType.LOGOUT):
        raise SessionError(f"cannot send {kind.name} before Logon")
    seq = session.out_seq + 1
    stamped = message.with_fields(
        (Tag.SenderCompID, session.sender),
        (Tag.TargetCompID, session.target),
        (Tag.MsgSeqNum, seq),
        (Tag.SendingTime, format_sending_time(now_us)),
    )
    # the session stays up after our Logout until the peer's Logout arrives
    logged_on = session.logged_on or kind is MsgType.LOGON
    return serialize(stamped), replace(session, out_seq=seq, logged_on=logged_on)


def check_inbound(session: SessionState, message: FixMessage) -> SessionState:
    """Validate the inbound sequence number; no resend or gap-fill is attempted."""
    seq = message.seq_num
    if seq is None:
        raise SessionError("inbound message without MsgSeqNum")
    expected = session.in_seq + 1
    if seq < expected:
        raise SessionError(f"MsgSeqNum too low: got {seq}, expected {expected}")
    if seq > expected:
        raise SessionError(f"MsgSeqNum gap: got {seq}, expected {expected}")
    kind = message.kind
    if not session.logged_on and kind not in (MsgType.LOGON, MsgType.LOGOUT):
        raise SessionError(f"received {kind.name} before Logon")
    logged_on = (session.logged_on or kind is MsgType.LOGON) and kind is not MsgType.LOGOUT
    return replace(session, in_seq=seq, logged_on=logged_on)


def logon(heartbeat_s: int = DEFAULT_HEARTBEAT_S) -> FixMessage:
    return FixMessage.build(MsgType.LOGON, (Tag.EncryptMethod, 0), (Tag.HeartBtInt, heartbeat_s))


def heartbeat() -> FixMessage:
    return FixMessage.build(MsgType.HEARTBEAT)


def logout(text: Optional[str] = None) -> FixMessage:
    pairs: Iterable[tuple[int, Value]] = [(Tag.Text, text)] if text else []
    return FixMessage.build(MsgType.LOGOUT, *pairs)
