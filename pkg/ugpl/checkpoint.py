#! /usr/bin/python3
"""Flat binary checkpoints.

Layout, all little-endian:

    b'UGPL'  u32 version  u64 record count
    per record: u16 name length, name (utf-8), u8 rank, u32 dims[rank],
                f64 values (row-major)

"""
import io
import struct
import numpy as np
from .errors import CheckpointError
from typing import BinaryIO, Dict

MAGIC = b'UGPL'
VERSION = 1


def write_checkpoint(f: BinaryIO, arrays: Dict[str, np.ndarray]) -> None:
    f.write(MAGIC + struct.pack('<IQ', VERSION, len(arrays)))
    for name, arr in arrays.items():
        bname = name.encode('utf-8')
        if len(bname) > 0xFFFF or arr.ndim > 0xFF:
            raise CheckpointError("cannot encode {} (shape {})".format(name, arr.shape))
        f.write(struct.pack('<H', len(bname)) + bname)
        f.write(struct.pack('<B', arr.ndim))
        f.write(struct.pack('<{}I'.format(arr.ndim), *arr.shape))
        f.write(np.ascontiguousarray(arr, dtype='<f8').tobytes())


def _read(f: BinaryIO, n: int, what: str) -> bytes:
    b = f.read(n)
    if len(b) != n:
        raise CheckpointError("truncated checkpoint reading {}".format(what))
    return b


def read_checkpoint(f: BinaryIO) -> Dict[str, np.ndarray]:
    if _read(f, 4, 'magic') != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    version, count = struct.unpack('<IQ', _read(f, 12, 'header'))
    if version != VERSION:
        raise CheckpointError("unsupported checkpoint version {}".format(version))
    ret: Dict[str, np.ndarray] = {}
    for i in range(count):
        namelen, = struct.unpack('<H', _read(f, 2, 'record {} name length'.format(i)))
        name = _read(f, namelen, 'record {} name'.format(i)).decode('utf-8')
        rank, = struct.unpack('<B', _read(f, 1, '{} rank'.format(name)))
        dims = struct.unpack('<{}I'.format(rank), _read(f, 4 * rank, '{} dims'.format(name)))
        size = int(np.prod(dims, dtype=np.int64))
        values = np.frombuffer(_read(f, 8 * size, '{} values'.format(name)), dtype='<f8')
        if name in ret:
            raise CheckpointError("duplicate record {}".format(name))
        ret[name] = values.astype(np.float64).reshape(dims)
    if f.read(1):
        raise CheckpointError("trailing bytes after {} records".format(count))
    return ret


def save(path: str, arrays: Dict[str, np.ndarray]) -> None:
    with open(path, 'wb') as f:
        write_checkpoint(f, arrays)


def load(path: str) -> Dict[str, np.ndarray]:
    try:
        with open(path, 'rb') as f:
            return read_checkpoint(f)
    except OSError as e:
        raise CheckpointError("cannot read {}: {}".format(path, e))


def test_roundtrip() -> None:
    arrays = {'a.weight': np.arange(6.0).reshape(2, 3), 'scalar': np.array(2.5)}
    buf = io.BytesIO()
    write_checkpoint(buf, arrays)
    buf.seek(0)
    back = read_checkpoint(buf)
    assert list(back) == list(arrays)
    assert all(np.array_equal(back[k], arrays[k]) and back[k].shape == arrays[k].shape for k in arrays)
