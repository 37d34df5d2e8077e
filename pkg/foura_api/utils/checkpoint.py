"""
Adapter checkpoints in a small binary container.

    magic    5 bytes  b"FOUR1"
    version  u16
    meta     u32 length + UTF-8 text, one key=value per line
    tensors  until end of file, each:
             u32 name length + UTF-8 name, dtype u8 (0 = f64, 1 = f32), ndim u8,
             ndim x u32 dims, row-major payload

All integers and scalars are little-endian.
"""
import struct
from dataclasses import dataclass, field
from typing import ClassVar, Dict, List, Tuple

import numpy as np

from .adapter import AdapterLayer, GateState
from .exceptions import CheckpointFormatError, IncompatibleCheckpoints, InvalidInput
from .foura_schema import Axis, GateMode, TrainConfig, TransformKind

MAGIC = b"FOUR1"
VERSION = 1

_DTYPES = {0: np.dtype('<f8'), 1: np.dtype('<f4')}
_CODES = {np.dtype('float64'): 0, np.dtype('float32'): 1}

GATE_TENSORS = ('g1', 'g2', 'b1', 'b2')


@dataclass
class Checkpoint:
    meta: Dict[str, str] = field(default_factory=dict)
    tensors: Dict[str, np.ndarray] = field(default_factory=dict)

    version_format: ClassVar[struct.Struct] = struct.Struct('<H')
    length_format: ClassVar[struct.Struct] = struct.Struct('<I')
    tensor_header_format: ClassVar[struct.Struct] = struct.Struct('<BB')

    @property
    def layer_names(self) -> List[str]:
        names = self.meta.get('layers', '')
        return [name for name in names.split(',') if name]


def _meta_text(meta: Dict[str, str]) -> str:
    lines = []
    for key, value in meta.items():
        key, value = str(key), str(value)
        if not key or '=' in key or '\n' in key or '\n' in value:
            raise InvalidInput(f"meta entry {key!r} cannot be stored as a key=value line")
        lines.append(f"{key}={value}")
    return '\n'.join(lines)


def _parse_meta(text: str) -> Dict[str, str]:
    meta = {}
    for line in text.split('\n'):
        if not line:
            continue
        key, sep, value = line.partition('=')
        if not sep:
            raise CheckpointFormatError(f"meta line {line!r} is not key=value")
        meta[key] = value
    return meta


def encode(ckpt: Checkpoint) -> bytes:
    parts = [MAGIC, Checkpoint.version_format.pack(VERSION)]
    meta = _meta_text(ckpt.meta).encode('utf-8')
    parts += [Checkpoint.length_format.pack(len(meta)), meta]
    for name, tensor in ckpt.tensors.items():
        array = np.asarray(tensor)
        if array.dtype not in _CODES:
            raise InvalidInput(f"tensor {name} has dtype {array.dtype}; only float64 and float32 are stored")
        if array.ndim > 255:
            raise InvalidInput(f"tensor {name} has too many dimensions")
        code = _CODES[array.dtype]
        encoded_name = name.encode('utf-8')
        parts += [Checkpoint.length_format.pack(len(encoded_name)), encoded_name,
                  Checkpoint.tensor_header_format.pack(code, array.ndim)]
        parts += [Checkpoint.length_format.pack(dim) for dim in array.shape]
        parts.append(np.ascontiguousarray(array, dtype=_DTYPES[code]).tobytes())
    return b''.join(parts)


class _Reader:

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, size: int, what: str) -> bytes:
        end = self.pos + size
        if end > len(self.data):
            raise CheckpointFormatError(f"checkpoint truncated while reading {what}")
        chunk = self.data[self.pos:end]
        self.pos = end
        return chunk

    def unpack(self, fmt: struct.Struct, what: str) -> Tuple:
        return fmt.unpack(self.take(fmt.size, what))

    @property
    def done(self) -> bool:
        return self.pos >= len(self.data)


def decode(data: bytes) -> Checkpoint:
    reader = _Reader(data)
    if reader.take(len(MAGIC), 'magic') != MAGIC:
        raise CheckpointFormatError("not a checkpoint file (bad magic)")
    version, = reader.unpack(Checkpoint.version_format, 'version')
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version} (expected {VERSION})")
    meta_len, = reader.unpack(Checkpoint.length_format, 'meta length')
    try:
        meta = _parse_meta(reader.take(meta_len, 'meta').decode('utf-8'))
    except UnicodeDecodeError:
        raise CheckpointFormatError("meta block is not valid UTF-8")

    tensors = {}
    while not reader.done:
        name_len, = reader.unpack(Checkpoint.length_format, 'tensor name length')
        try:
            name = reader.take(name_len, 'tensor name').decode('utf-8')
        except UnicodeDecodeError:
            raise CheckpointFormatError("tensor name is not valid UTF-8")
        code, ndim = reader.unpack(Checkpoint.tensor_header_format, f"header of {name}")
        if code not in _DTYPES:
            raise CheckpointFormatError(f"tensor {name} has unknown dtype code {code}")
        shape = tuple(reader.unpack(Checkpoint.length_format, f"dims of {name}")[0] for _ in range(ndim))
        dtype = _DTYPES[code]
        count = int(np.prod(shape, dtype=np.int64))
        payload = reader.take(count * dtype.itemsize, f"payload of {name}")
        tensors[name] = np.frombuffer(payload, dtype=dtype).reshape(shape).astype(dtype.newbyteorder('='))
    return Checkpoint(meta=meta, tensors=tensors)


def write_checkpoint(path, ckpt: Checkpoint):
    with open(path, 'wb') as f:
        f.write(encode(ckpt))


def read_checkpoint(path) -> Checkpoint:
    try:
        with open(path, 'rb') as f:
            data = f.read()
    except OSError as e:
        raise CheckpointFormatError(f"could not read checkpoint {path}: {e}")
    return decode(data)


# Layers <-> checkpoints ------------------------------------------------------------------------

def from_layers(layers: Dict[str, AdapterLayer], cfg: TrainConfig) -> Checkpoint:
    """Checkpoint of trained layers with the run's settings in the meta block."""
    meta = {
        'task': cfg.task.value,
        'rank': str(cfg.rank),
        'transform': cfg.transform.value,
        'axis': cfg.axis.value,
        'alpha': repr(float(cfg.alpha)),
        'seed': str(cfg.seed),
        'gate_mode': cfg.gate_mode.value,
        'threshold': repr(float(cfg.threshold)),
        'layers': ','.join(layers),
    }
    tensors = {}
    for name, layer in layers.items():
        meta[f"{name}.alpha"] = repr(float(layer.alpha))
        meta[f"{name}.transform"] = TransformKind(layer.transform).value
        meta[f"{name}.axis"] = Axis(layer.axis).value
        tensors[f"{name}.w0"] = layer.w0
        tensors[f"{name}.a"] = layer.a
        tensors[f"{name}.b"] = layer.b
        if layer.gate is not None:
            gate = layer.gate
            meta[f"{name}.gate_mode"] = GateMode(gate.mode).value
            meta[f"{name}.threshold"] = repr(float(gate.threshold))
            meta[f"{name}.entropy_weight"] = repr(float(gate.entropy_weight))
            for key in GATE_TENSORS:
                tensors[f"{name}.{key}"] = getattr(gate, key)
            if gate.frozen_mask is not None:
                tensors[f"{name}.frozen_mask"] = gate.frozen_mask
    return Checkpoint(meta=meta, tensors=tensors)


def _tensor(ckpt: Checkpoint, key: str) -> np.ndarray:
    if key not in ckpt.tensors:
        raise CheckpointFormatError(f"checkpoint has no tensor {key}")
    return np.asarray(ckpt.tensors[key], dtype=np.float64)


def to_layers(ckpt: Checkpoint) -> Dict[str, AdapterLayer]:
    names = ckpt.layer_names
    if not names:
        raise CheckpointFormatError("checkpoint lists no layers")
    layers = {}
    for name in names:
        try:
            gate = None
            if f"{name}.gate_mode" in ckpt.meta:
                mask = ckpt.tensors.get(f"{name}.frozen_mask")
                gate = GateState(**{key: _tensor(ckpt, f"{name}.{key}") for key in GATE_TENSORS},
                                 threshold=float(ckpt.meta[f"{name}.threshold"]),
                                 mode=GateMode(ckpt.meta[f"{name}.gate_mode"]),
                                 frozen_mask=None if mask is None else np.asarray(mask, dtype=np.float64),
                                 entropy_weight=float(ckpt.meta[f"{name}.entropy_weight"]))
            layers[name] = AdapterLayer(w0=_tensor(ckpt, f"{name}.w0"), a=_tensor(ckpt, f"{name}.a"),
                                        b=_tensor(ckpt, f"{name}.b"), alpha=float(ckpt.meta[f"{name}.alpha"]),
                                        transform=TransformKind(ckpt.meta[f"{name}.transform"]),
                                        axis=Axis(ckpt.meta[f"{name}.axis"]), gate=gate)
        except (KeyError, ValueError) as e:
            raise CheckpointFormatError(f"layer {name} is incomplete: {e}")
    return layers


def check_same_layout(first: Dict[str, AdapterLayer], second: Dict[str, AdapterLayer], what: str = 'checkpoints'):
    if list(first) != list(second):
        raise IncompatibleCheckpoints(f"{what} hold different layers: {list(first)} vs {list(second)}")
    for name in first:
        if first[name].w0.shape != second[name].w0.shape:
            raise IncompatibleCheckpoints(f"{what} disagree on the shape of {name}: "
                                          f"{first[name].w0.shape} vs {second[name].w0.shape}")
