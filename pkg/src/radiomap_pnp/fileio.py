"""On-disk formats: the RMT1 tensor container, mask JSON and sidecars.

RMT1 layout (little-endian throughout):

    bytes 0-3   magic "RMT1"
    byte  4     u8 ndim
    next        ndim x u64 dims, in order M, N, K
    payload     float64 values with k fastest, then m, then n

The payload ordering makes the matricized column of each grid cell
contiguous.  Masks are UTF-8 JSON arrays of 0-based [m, n] pairs.
All writers go through a temp-file rename so partial files never
appear under the target name.
"""

import json
import os
import struct
import tempfile

import numpy as np

from .errors import ShapeError

MAGIC_TENSOR = b"RMT1"


def _atomic_write(path, payload: bytes):
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-rmt-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_tensor(path, data):
    """Write an (M, N, K) array as an RMT1 file."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 3:
        raise ShapeError(f"RMT1 stores M x N x K tensors, got {data.shape}")
    header = MAGIC_TENSOR + struct.pack("<B", 3)
    header += struct.pack("<3Q", *data.shape)
    # (n, m, k) C-order ravel leaves k fastest, then m, then n
    payload = np.ascontiguousarray(data.transpose(1, 0, 2), dtype="<f8").tobytes()
    _atomic_write(path, header + payload)


def read_tensor(path):
    """Read an RMT1 file back into an (M, N, K) float array."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC_TENSOR:
        raise ValueError(f"{path}: bad magic {blob[:4]!r}, expected RMT1")
    ndim = blob[4]
    if ndim != 3:
        raise ValueError(f"{path}: unsupported ndim {ndim}")
    dims = struct.unpack_from("<3Q", blob, 5)
    offset = 5 + 3 * 8
    expected = dims[0] * dims[1] * dims[2] * 8
    if len(blob) - offset != expected:
        raise ValueError(
            f"{path}: payload holds {len(blob) - offset} bytes, "
            f"dims {dims} need {expected}")
    flat = np.frombuffer(blob, dtype="<f8", offset=offset)
    return flat.reshape(dims[1], dims[0], dims[2]).transpose(1, 0, 2).copy()


def write_mask(path, mask):
    cells = [[int(m), int(n)] for m, n in mask.omega]
    _atomic_write(path, json.dumps(cells).encode("utf-8"))


def read_mask(path, dims):
    """Load a mask JSON for an (M, N) grid."""
    from .core import SamplingMask

    with open(path, "rb") as fh:
        cells = json.loads(fh.read().decode("utf-8"))
    if not isinstance(cells, list):
        raise ValueError(f"{path}: mask file must hold a JSON array")
    return SamplingMask(m=dims[0], n=dims[1], omega=tuple(map(tuple, cells)))


def write_json(path, obj):
    _atomic_write(path, json.dumps(obj, indent=2, sort_keys=True).encode("utf-8"))


def read_json(path):
    with open(path, "rb") as fh:
        return json.loads(fh.read().decode("utf-8"))


def load_slf_stack(paths):
    """Import external spatial fields stored as K=1 RMT1 slices."""
    fields = []
    for p in paths:
        arr = read_tensor(p)
        if arr.shape[2] != 1:
            raise ShapeError(f"{p}: expected a K=1 slice, got K={arr.shape[2]}")
        fields.append(arr[:, :, 0])
    shapes = {f.shape for f in fields}
    if len(shapes) > 1:
        raise ShapeError(f"inconsistent grids across slices: {sorted(shapes)}")
    return np.stack(fields, axis=0)
