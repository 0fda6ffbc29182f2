"""
Controller <-> learner wire protocol.

Every frame is length-prefixed:

    u32 LE  frame length (bytes after this field)
    u16 LE  protocol version
    u8      message kind
    u32 LE  iteration
    u32 LE  agent id            (update, hello and failure frames only)
    ...     payload

Payloads reuse the parameter codec from neural_net (shape header + f64 LE), so
parameters cross the wire bit-exact. Update frames end with two f64 timings
(collection seconds, update seconds). Failure frames carry a u32 length and a
UTF-8 reason; a learner sends one before it stops on an error.

Two channel kinds carry the same frames: QueueChannel (threads in one process)
and SocketChannel (TCP).
"""

import logging
import queue
import socket
import struct
import threading
from dataclasses import dataclass
from typing import List, Union

from neural_net import LINEAR, MlpParams, pack_params, unpack_params

logger = logging.getLogger(__name__)

PROTOCOL_VERSION = 1

KIND_HEARTBEAT = 0
KIND_PARAMS = 1
KIND_UPDATE = 2
KIND_SHUTDOWN = 3
KIND_HELLO = 4
KIND_FAILURE = 5
_KINDS_WITH_AGENT = (KIND_UPDATE, KIND_HELLO, KIND_FAILURE)

_LENGTH = struct.Struct("<I")
_HEADER = struct.Struct("<HBI")
_AGENT = struct.Struct("<I")
_COUNT = struct.Struct("<I")
_TIMINGS = struct.Struct("<dd")

MAX_FRAME_BYTES = 1 << 31


class ProtocolError(ValueError):
    """Malformed frame, unknown kind or version mismatch."""


@dataclass
class Heartbeat:
    iteration: int = 0


@dataclass
class Shutdown:
    iteration: int = 0


@dataclass
class Hello:
    agent_id: int
    iteration: int = 0


@dataclass
class ParamMsg:
    iteration: int
    policies: List[MlpParams]
    targets: List[MlpParams]

    def __post_init__(self):
        if len(self.policies) != len(self.targets):
            raise ValueError("ParamMsg needs one target per policy")


@dataclass
class UpdateMsg:
    iteration: int
    agent_id: int
    policy: MlpParams
    target: MlpParams
    collect_s: float = 0.0
    update_s: float = 0.0


@dataclass
class LearnerFailure:
    iteration: int
    agent_id: int
    reason: str


Message = Union[Heartbeat, Shutdown, Hello, ParamMsg, UpdateMsg, LearnerFailure]


def _kind_of(msg):
    if isinstance(msg, Heartbeat):
        return KIND_HEARTBEAT
    if isinstance(msg, ParamMsg):
        return KIND_PARAMS
    if isinstance(msg, UpdateMsg):
        return KIND_UPDATE
    if isinstance(msg, Shutdown):
        return KIND_SHUTDOWN
    if isinstance(msg, Hello):
        return KIND_HELLO
    if isinstance(msg, LearnerFailure):
        return KIND_FAILURE
    raise TypeError(f"not a protocol message: {type(msg).__name__}")


def encode_message(msg: Message, version=PROTOCOL_VERSION) -> bytes:
    """Full frame including the length prefix."""
    kind = _kind_of(msg)
    parts = [_HEADER.pack(version, kind, msg.iteration)]
    if kind in _KINDS_WITH_AGENT:
        parts.append(_AGENT.pack(msg.agent_id))
    if kind == KIND_PARAMS:
        parts.append(_COUNT.pack(len(msg.policies)))
        for policy, target in zip(msg.policies, msg.targets):
            parts.append(pack_params(policy))
            parts.append(pack_params(target))
    elif kind == KIND_UPDATE:
        parts.append(pack_params(msg.policy))
        parts.append(pack_params(msg.target))
        parts.append(_TIMINGS.pack(msg.collect_s, msg.update_s))
    elif kind == KIND_FAILURE:
        reason = msg.reason.encode("utf-8")
        parts.append(_COUNT.pack(len(reason)))
        parts.append(reason)
    body = b"".join(parts)
    return _LENGTH.pack(len(body)) + body


def decode_message(body, head=LINEAR, scale=1.0) -> Message:
    """
    Decode a frame body (length prefix already stripped).

    Parameter blobs carry shapes but not the output head, so the caller passes
    the policy head of the run.
    """
    try:
        version, kind, iteration = _HEADER.unpack_from(body, 0)
    except struct.error as e:
        raise ProtocolError(f"truncated frame header: {e}") from e
    if version != PROTOCOL_VERSION:
        raise ProtocolError(f"protocol version {version} does not match {PROTOCOL_VERSION}")
    offset = _HEADER.size
    agent_id = None
    try:
        if kind in _KINDS_WITH_AGENT:
            (agent_id,) = _AGENT.unpack_from(body, offset)
            offset += _AGENT.size
        if kind == KIND_HEARTBEAT:
            msg = Heartbeat(iteration)
        elif kind == KIND_SHUTDOWN:
            msg = Shutdown(iteration)
        elif kind == KIND_HELLO:
            msg = Hello(agent_id, iteration)
        elif kind == KIND_PARAMS:
            (count,) = _COUNT.unpack_from(body, offset)
            offset += _COUNT.size
            policies, targets = [], []
            for _ in range(count):
                policy, offset = unpack_params(body, offset, head, scale)
                target, offset = unpack_params(body, offset, head, scale)
                policies.append(policy)
                targets.append(target)
            msg = ParamMsg(iteration, policies, targets)
        elif kind == KIND_UPDATE:
            policy, offset = unpack_params(body, offset, head, scale)
            target, offset = unpack_params(body, offset, head, scale)
            collect_s, update_s = _TIMINGS.unpack_from(body, offset)
            offset += _TIMINGS.size
            msg = UpdateMsg(iteration, agent_id, policy, target, collect_s, update_s)
        elif kind == KIND_FAILURE:
            (size,) = _COUNT.unpack_from(body, offset)
            offset += _COUNT.size
            if offset + size > len(body):
                raise ProtocolError(f"failure reason of {size} bytes overruns the frame")
            reason = bytes(body[offset:offset + size]).decode("utf-8", errors="replace")
            offset += size
            msg = LearnerFailure(iteration, agent_id, reason)
        else:
            raise ProtocolError(f"unknown message kind {kind}")
    except struct.error as e:
        raise ProtocolError(f"truncated frame of kind {kind}: {e}") from e
    except ValueError as e:
        if isinstance(e, ProtocolError):
            raise
        raise ProtocolError(f"bad payload in frame of kind {kind}: {e}") from e
    if offset != len(body):
        raise ProtocolError(f"{len(body) - offset} trailing bytes in frame of kind {kind}")
    return msg


def split_frame(frame):
    """Strip and check the length prefix of a complete frame."""
    if len(frame) < _LENGTH.size:
        raise ProtocolError("frame shorter than its length prefix")
    (length,) = _LENGTH.unpack_from(frame, 0)
    if length != len(frame) - _LENGTH.size:
        raise ProtocolError(f"length prefix {length} does not match body of {len(frame) - _LENGTH.size} bytes")
    return frame[_LENGTH.size:]


class QueueChannel:
    """One end of an in-process channel; frames are exchanged as bytes."""

    def __init__(self, inbox, outbox):
        self._inbox = inbox
        self._outbox = outbox
        self.closed = False

    def send(self, frame):
        if self.closed:
            raise ConnectionError("send on a closed channel")
        self._outbox.put(bytes(frame))

    def recv(self, timeout=None):
        try:
            frame = self._inbox.get(timeout=timeout)
        except queue.Empty:
            raise TimeoutError("no frame received before the timeout") from None
        if frame is None:
            raise ConnectionError("channel closed")
        return split_frame(frame)

    def close(self):
        self.closed = True
        # wakes a reader blocked on this end
        self._inbox.put(None)


def queue_pair():
    """(controller end, learner end) of a fresh in-process channel."""
    to_learner = queue.Queue()
    to_controller = queue.Queue()
    return QueueChannel(to_controller, to_learner), QueueChannel(to_learner, to_controller)


def recv_all(sock, size):
    buf = bytearray()
    while size > 0:
        chunk = sock.recv(size)
        if not chunk:
            raise ConnectionError("peer closed the connection mid-frame")
        buf.extend(chunk)
        size -= len(chunk)
    return bytes(buf)


class SocketChannel:
    """Framed messages over a connected TCP socket."""

    def __init__(self, sock: socket.socket):
        self.sock = sock
        self._send_lock = threading.Lock()
        self.closed = False

    def send(self, frame):
        with self._send_lock:
            self.sock.sendall(frame)

    def recv(self, timeout=None):
        self.sock.settimeout(timeout)
        try:
            (length,) = _LENGTH.unpack(recv_all(self.sock, _LENGTH.size))
            if length > MAX_FRAME_BYTES:
                raise ProtocolError(f"frame length {length} exceeds {MAX_FRAME_BYTES}")
            return recv_all(self.sock, length)
        except socket.timeout:
            raise TimeoutError("no frame received before the timeout") from None

    def close(self):
        self.closed = True
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()
