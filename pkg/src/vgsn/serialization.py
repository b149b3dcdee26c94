"""Model file format.

A model file is an ASCII header followed by a binary blob::

    VGSN-MODEL
    version=1
    kind=vgsn
    image_h=32
    ...
    param_count=409585
    crc32=1a2b3c4d
    <blank line>
    <float32 little-endian blob>

The blob holds every parameter tensor in ``VgsnParams.named_parameters`` order
followed by the batchnorm running statistics (``named_buffers`` order), each
flattened row-major. ``crc32`` covers all header lines before it plus the blob.
"""

from __future__ import annotations

import zlib

import numpy as np

from .model import ConfigError, GridSpec, ModelConfig, VgsnParams, init_params
from .tensor import Rng, precision

__all__ = [
    "ChecksumError",
    "HeaderError",
    "MagicError",
    "ModelFormatError",
    "SizeMismatchError",
    "TruncatedError",
    "VersionError",
    "load_model",
    "read_model",
    "save_model",
    "write_model",
]

MAGIC = "VGSN-MODEL"
VERSION = 1
MAX_HEADER = 4096


class ModelFormatError(ValueError):
    category = "format"


class MagicError(ModelFormatError):
    category = "bad-magic"


class VersionError(ModelFormatError):
    category = "version"


class HeaderError(ModelFormatError):
    category = "header"


class TruncatedError(ModelFormatError):
    category = "truncated"


class SizeMismatchError(ModelFormatError):
    category = "size-mismatch"


class ChecksumError(ModelFormatError):
    category = "checksum"


def _ints(values) -> str:
    return ",".join(str(v) for v in values)


def _header_fields(config: ModelConfig, count: int) -> list[tuple[str, str]]:
    return [
        ("version", str(VERSION)),
        ("kind", config.kind),
        ("image_h", str(config.image_size)),
        ("image_w", str(config.image_size)),
        ("channels", "1"),
        ("encoder_depth", str(config.encoder_depth)),
        ("decoder_stages", str(config.decoder_stages)),
        ("latent_dim", str(config.latent_dim)),
        ("basis_dim", str(config.basis_dim)),
        ("grid", str(config.grid.g)),
        ("partition_latent_dim", str(config.grid.partition_latent_dim)),
        ("encoder_channels", _ints(config.encoder_channels)),
        ("decoder_channels", _ints(config.decoder_channels)),
        ("kernel_size", str(config.kernel_size)),
        ("combine_kernel", str(config.combine_kernel)),
        ("bn_momentum", repr(float(config.bn_momentum))),
        ("bn_epsilon", repr(float(config.bn_epsilon))),
        ("param_count", str(count)),
    ]


def save_model(params: VgsnParams) -> bytes:
    arrays = [t.data.astype("<f4").ravel() for _, t in params.state()]
    blob = np.concatenate(arrays).tobytes() if arrays else b""
    count = len(blob) // 4
    lines = [MAGIC] + [f"{k}={v}" for k, v in _header_fields(params.config, count)]
    head = ("\n".join(lines) + "\n").encode("ascii")
    crc = zlib.crc32(blob, zlib.crc32(head))
    return head + f"crc32={crc:08x}\n\n".encode("ascii") + blob


def _parse_header(data: bytes) -> tuple[dict[str, str], bytes, int]:
    end = data.find(b"\n\n", 0, MAX_HEADER)
    if not data.startswith(MAGIC.encode() + b"\n"):
        raise MagicError("not a VGSN model file (bad magic)")
    if end < 0:
        raise TruncatedError("model header is truncated")
    try:
        text = data[:end].decode("ascii")
    except UnicodeDecodeError:
        raise HeaderError("model header is not ASCII") from None
    lines = text.split("\n")
    fields = {}
    for line in lines[1:]:
        key, sep, value = line.partition("=")
        if not sep or not key or key in fields:
            raise HeaderError(f"malformed header line {line!r}")
        fields[key] = value
    if lines[-1].startswith("crc32="):
        signed = data[: data.rfind(b"crc32=", 0, end)]
    else:
        raise HeaderError("header has no trailing crc32 line")
    return fields, signed, end + 2


def _int(fields, key) -> int:
    try:
        value = fields[key]
    except KeyError:
        raise HeaderError(f"header field {key!r} missing") from None
    if not value.isdigit():
        raise HeaderError(f"header field {key}={value!r} is not a non-negative integer")
    return int(value)


def _float(fields, key) -> float:
    try:
        return float(fields[key])
    except KeyError:
        raise HeaderError(f"header field {key!r} missing") from None
    except ValueError:
        raise HeaderError(f"header field {key}={fields[key]!r} is not a number") from None


def _int_list(fields, key) -> tuple[int, ...]:
    value = fields.get(key)
    if value is None:
        raise HeaderError(f"header field {key!r} missing")
    parts = value.split(",")
    if not all(p.isdigit() for p in parts):
        raise HeaderError(f"header field {key}={value!r} is not an integer list")
    return tuple(int(p) for p in parts)


def load_model(data: bytes) -> VgsnParams:
    """Parse a model file; raises a :class:`ModelFormatError` subclass on any defect."""
    data = bytes(data)
    fields, signed, offset = _parse_header(data)
    version = _int(fields, "version")
    if version != VERSION:
        raise VersionError(f"model format version {version} unsupported (expected {VERSION})")
    if fields.get("kind") not in ("vgsn", "vae"):
        raise HeaderError(f"unknown model kind {fields.get('kind')!r}")
    h, w = _int(fields, "image_h"), _int(fields, "image_w")
    if h != w or _int(fields, "channels") != 1:
        raise HeaderError("model images must be square and single-channel")
    try:
        config = ModelConfig(
            image_size=h,
            encoder_depth=_int(fields, "encoder_depth"),
            decoder_stages=_int(fields, "decoder_stages"),
            latent_dim=_int(fields, "latent_dim"),
            basis_dim=_int(fields, "basis_dim"),
            grid=GridSpec(_int(fields, "grid"), _int(fields, "partition_latent_dim")),
            encoder_channels=_int_list(fields, "encoder_channels"),
            decoder_channels=_int_list(fields, "decoder_channels"),
            kernel_size=_int(fields, "kernel_size"),
            combine_kernel=_int(fields, "combine_kernel"),
            kind=fields["kind"],
            bn_momentum=_float(fields, "bn_momentum"),
            bn_epsilon=_float(fields, "bn_epsilon"),
        )
    except ConfigError as exc:
        raise HeaderError(f"inconsistent model config: {exc}") from None
    count = _int(fields, "param_count")
    crc_text = fields.get("crc32", "")
    try:
        crc = int(crc_text, 16)
    except ValueError:
        raise HeaderError(f"bad crc32 field {crc_text!r}") from None
    blob = data[offset:]
    if len(blob) < 4 * count:
        raise TruncatedError(f"parameter blob truncated: {len(blob)} of {4 * count} bytes")
    if len(blob) > 4 * count:
        raise SizeMismatchError(f"{len(blob) - 4 * count} trailing bytes after parameter blob")
    expected = config.state_size()
    if expected != count:
        raise SizeMismatchError(f"header config needs {expected} values but the blob holds {count}")
    if zlib.crc32(blob, zlib.crc32(signed)) != crc:
        raise ChecksumError("checksum mismatch: model file is corrupted")
    # structure comes from init; values are overwritten below
    with precision("float32"):
        params = init_params(config, Rng(0))
    state = params.state()
    values = np.frombuffer(blob, dtype="<f4")
    pos = 0
    for _, t in state:
        t.data = values[pos : pos + t.size].reshape(t.shape).astype(np.float32)
        pos += t.size
    return params


def write_model(path, params: VgsnParams) -> None:
    with open(path, "wb") as fh:
        fh.write(save_model(params))


def read_model(path) -> VgsnParams:
    with open(path, "rb") as fh:
        return load_model(fh.read())
