"""Binary stdio framing: DNRQ requests in, DNRS responses out."""

import struct
import sys

import numpy as np

MAGIC_REQUEST = b"DNRQ"
MAGIC_RESPONSE = b"DNRS"
HEADER = struct.Struct("<IId")


class ProtocolViolation(RuntimeError):
    pass


def _read_exact(stream, count):
    chunks = []
    remaining = count
    while remaining:
        chunk = stream.read(remaining)
        if not chunk:
            raise ProtocolViolation(
                f"stream ended {remaining} bytes short of a full frame")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_request(stream):
    """Read one request; returns (field, sigma) or None on clean EOF."""
    magic = stream.read(4)
    if not magic:
        return None
    if len(magic) < 4 or magic != MAGIC_REQUEST:
        raise ProtocolViolation(f"bad request magic {magic!r}")
    m, n, sigma = HEADER.unpack(_read_exact(stream, HEADER.size))
    if m < 1 or n < 1:
        raise ProtocolViolation(f"degenerate dims {m} x {n}")
    payload = _read_exact(stream, 8 * m * n)
    flat = np.frombuffer(payload, dtype="<f8")
    return flat.reshape(n, m).T.copy(), float(sigma)


def write_response(stream, field):
    payload = np.ascontiguousarray(
        field.ravel(order="F"), dtype="<f8").tobytes()
    stream.write(MAGIC_RESPONSE + payload)
    stream.flush()


def serve_loop(engine, stdin=None, stdout=None):
    """Serve requests until EOF; exits the process nonzero on framing
    violations, as the bridge contract requires."""
    stdin = stdin if stdin is not None else sys.stdin.buffer
    stdout = stdout if stdout is not None else sys.stdout.buffer
    while True:
        try:
            request = read_request(stdin)
        except ProtocolViolation as exc:
            print(f"denoise-plugin: {exc}", file=sys.stderr)
            raise SystemExit(2)
        if request is None:
            return
        field, sigma = request
        write_response(stdout, engine(field, sigma))
