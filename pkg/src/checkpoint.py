"""
Binary checkpoint format, little-endian throughout:

    magic       6 bytes  b"LMS2S1"
    u32         config-echo length, then that many UTF-8 bytes of key=value lines
    u32         entry count
    per entry:
        u16     name length, then UTF-8 name "group/param"
        u8      precision tag (4 or 8 bytes per value)
        u8      frozen flag
        u8      ndim, then ndim x u32 dims
        raw     product(dims) values
"""

import logging
import struct
from pathlib import Path
from typing import Dict, Mapping, Tuple

import numpy as np

from .errors import CheckpointError
from .models import ModelParams, ParamGroup
from .utils import parse_key_values

logger = logging.getLogger(__name__)

MAGIC = b"LMS2S1"
PRECISIONS = {4: np.dtype('<f4'), 8: np.dtype('<f8')}
NATIVE = {4: np.float32, 8: np.float64}


def _encode_echo(config_echo: Mapping[str, str]) -> bytes:
    return ''.join(f"{k}={v}\n" for k, v in config_echo.items()).encode('utf-8')


def save_checkpoint(params: ModelParams, config_echo: Mapping[str, str], filepath: str):
    entries = [(group, key, tensor) for group in params for key, tensor in group.items()]
    out = bytearray(MAGIC)
    echo = _encode_echo(config_echo)
    out += struct.pack('<I', len(echo)) + echo
    out += struct.pack('<I', len(entries))
    for group, key, tensor in entries:
        name = f"{group.name}/{key}".encode('utf-8')
        tag = tensor.dtype.itemsize
        if tag not in PRECISIONS:
            raise CheckpointError(f"{group.name}/{key}: unsupported dtype {tensor.dtype}")
        out += struct.pack('<H', len(name)) + name
        out += struct.pack('<BBB', tag, int(group.frozen), tensor.ndim)
        out += struct.pack(f'<{tensor.ndim}I', *tensor.shape)
        out += np.ascontiguousarray(tensor.data, dtype=PRECISIONS[tag]).tobytes()
    Path(filepath).parent.mkdir(parents=True, exist_ok=True)
    with open(filepath, 'wb') as f:
        f.write(bytes(out))
    logger.info(f"checkpoint written: {filepath} ({len(entries)} tensors)")


class _Reader:

    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError(f"truncated checkpoint while reading {what}")
        chunk = self.blob[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def load_checkpoint(filepath: str) -> Tuple[ModelParams, Dict[str, str]]:
    path = Path(filepath)
    if not path.is_file():
        raise CheckpointError(f"{filepath}: no such checkpoint")
    with open(path, 'rb') as f:
        reader = _Reader(f.read())

    if reader.take(len(MAGIC), "magic") != MAGIC:
        raise CheckpointError(f"{filepath}: not an LMS2S checkpoint (bad magic)")
    (echo_len,) = reader.unpack('<I', "config echo length")
    try:
        echo = parse_key_values(reader.take(echo_len, "config echo").decode('utf-8').splitlines())
    except (UnicodeDecodeError, ValueError) as exc:
        raise CheckpointError(f"{filepath}: malformed config echo ({exc})") from exc
    (count,) = reader.unpack('<I', "entry count")

    params = ModelParams()
    frozen: Dict[str, bool] = {}
    for index in range(count):
        (name_len,) = reader.unpack('<H', f"entry {index} name length")
        name = reader.take(name_len, f"entry {index} name").decode('utf-8')
        group_name, sep, key = name.partition('/')
        if not sep:
            raise CheckpointError(f"entry '{name}': name must be 'group/param'")
        tag, is_frozen, ndim = reader.unpack('<BBB', f"entry '{name}' header")
        if tag not in PRECISIONS:
            raise CheckpointError(f"entry '{name}': unknown precision tag {tag}")
        shape = reader.unpack(f'<{ndim}I', f"entry '{name}' shape")
        n_values = int(np.prod(shape, dtype=np.int64))
        raw = reader.take(n_values * tag, f"entry '{name}' values")
        data = np.frombuffer(raw, dtype=PRECISIONS[tag]).reshape(shape)

        if group_name not in params:
            params.add(ParamGroup(group_name))
            frozen[group_name] = bool(is_frozen)
        elif frozen[group_name] != bool(is_frozen):
            raise CheckpointError(f"entry '{name}': frozen flag differs within group {group_name}")
        params[group_name].add(key, data.astype(NATIVE[tag]))

    if reader.pos != len(reader.blob):
        raise CheckpointError(f"{filepath}: {len(reader.blob) - reader.pos} trailing bytes")
    for group_name, is_frozen in frozen.items():
        if is_frozen:
            params[group_name].freeze()
    return params, echo
