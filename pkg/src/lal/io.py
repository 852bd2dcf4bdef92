"""Files: binary PGM images and masks, checkpoints, CSV curves, run configs.

Every writer goes through a temporary file and ``os.replace`` so readers
never see a half-written file.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .metrics import CSV_COLUMNS, MetricRecord
from .network import ModelParams, NetworkConfig, param_shapes
from .phantom import PhantomConfig
from .tensor import Tensor
from .training import TrainConfig

MAGIC = b"LALCKPT"
VERSION = 1
_CONFIG_FIELDS = ("depth", "base_channels", "in_channels", "out_channels", "kernel_size")


class FormatError(ValueError):
    pass


def write_atomic(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- PGM -------------------------------------------------------------------

def encode_pgm(pixels: np.ndarray) -> bytes:
    a = np.asarray(pixels, dtype=np.uint8)
    if a.ndim != 2:
        raise ValueError(f"PGM needs a 2D array, got shape {a.shape}")
    h, w = a.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + a.tobytes()


def decode_pgm(blob: bytes, name: str = "<pgm>") -> np.ndarray:
    """Parse a binary 8-bit PGM (P5) into a uint8 array."""
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos:pos + 1] == b"#":
            while pos < len(blob) and blob[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace() and blob[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise FormatError(f"{name}: malformed PGM header (ended after {len(tokens)} fields)")
        tokens.append(blob[start:pos])
    if tokens[0] != b"P5":
        raise FormatError(f"{name}: not a binary PGM (magic {tokens[0]!r}, expected b'P5')")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise FormatError(f"{name}: malformed PGM header {tokens!r}") from None
    if w <= 0 or h <= 0 or maxval != 255:
        raise FormatError(f"{name}: unsupported PGM header (width={w}, height={h}, maxval={maxval})")
    pos += 1  # single whitespace after maxval
    payload = blob[pos:]
    if len(payload) < w * h:
        raise FormatError(f"{name}: truncated PGM payload, expected {w * h} bytes, got {len(payload)}")
    return np.frombuffer(payload[:w * h], dtype=np.uint8).reshape(h, w).copy()


def image_to_bytes(image: np.ndarray) -> np.ndarray:
    """[0, 1] -> 0..255 with round-half-up."""
    v = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    return np.floor(v * 255.0 + 0.5).astype(np.uint8)


def write_image(path, image) -> None:
    write_atomic(path, encode_pgm(image_to_bytes(image)))


def read_image(path) -> np.ndarray:
    return decode_pgm(Path(path).read_bytes(), str(path)).astype(np.float64) / 255.0


def write_mask(path, mask) -> None:
    m = np.asarray(mask)
    if m.dtype != bool and not np.isin(m, (0, 1)).all():
        raise ValueError("mask must be binary")
    write_atomic(path, encode_pgm(np.where(m.astype(bool), 255, 0)))


def read_mask(path) -> np.ndarray:
    a = decode_pgm(Path(path).read_bytes(), str(path))
    bad = ~np.isin(a, (0, 255))
    if bad.any():
        vals = sorted(set(np.unique(a[bad]).tolist()))[:5]
        raise FormatError(f"{path}: mask file contains values other than 0/255, e.g. {vals}")
    return a == 255


# -- checkpoints -------------------------------------------------------------

def encode_checkpoint(params: ModelParams) -> bytes:
    out = io.BytesIO()
    out.write(MAGIC + bytes([VERSION]))
    cfg = params.config
    out.write(struct.pack("<5I", *(getattr(cfg, f) for f in _CONFIG_FIELDS)))
    out.write(struct.pack("<I", len(params.tensors)))
    for name, t in params.tensors.items():
        raw = name.encode("utf-8")
        out.write(struct.pack("<I", len(raw)) + raw)
        out.write(struct.pack("<I", t.data.ndim))
        out.write(struct.pack(f"<{t.data.ndim}I", *t.data.shape))
        out.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    return out.getvalue()


def decode_checkpoint(blob: bytes, name: str = "<checkpoint>") -> ModelParams:
    if blob[:7] != MAGIC:
        raise FormatError(f"{name}: bad magic {blob[:7]!r}, not a LAL checkpoint")
    if len(blob) < 8 or blob[7] != VERSION:
        got = blob[7] if len(blob) >= 8 else None
        raise FormatError(f"{name}: unsupported version {got!r} (this build reads version {VERSION})")
    view = memoryview(blob)
    pos = 8

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(blob):
            raise FormatError(f"{name}: truncated checkpoint at byte {pos}")
        vals = struct.unpack_from(fmt, view, pos)
        pos += size
        return vals

    cfg = NetworkConfig(**dict(zip(_CONFIG_FIELDS, take("<5I"))))
    expected = param_shapes(cfg)
    (count,) = take("<I")
    tensors: dict[str, Tensor] = {}
    for _ in range(count):
        (n,) = take("<I")
        if pos + n > len(blob):
            raise FormatError(f"{name}: truncated checkpoint at byte {pos}")
        pname = bytes(view[pos:pos + n]).decode("utf-8")
        pos += n
        (rank,) = take("<I")
        dims = take(f"<{rank}I")
        if pname not in expected:
            raise FormatError(f"{name}: unexpected parameter {pname!r} for {cfg}")
        if tuple(dims) != expected[pname]:
            raise FormatError(f"{name}: parameter {pname!r} has shape {tuple(dims)}, "
                              f"config expects {expected[pname]}")
        nbytes = 8 * int(np.prod(dims))
        if pos + nbytes > len(blob):
            raise FormatError(f"{name}: truncated data for {pname!r}")
        data = np.frombuffer(blob, dtype="<f8", count=nbytes // 8, offset=pos).reshape(dims)
        pos += nbytes
        tensors[pname] = Tensor(data.astype(np.float64), requires_grad=True)
    missing = [p for p in expected if p not in tensors]
    if missing:
        raise FormatError(f"{name}: missing parameter {missing[0]!r} ({len(missing)} missing in total)")
    if pos != len(blob):
        raise FormatError(f"{name}: {len(blob) - pos} trailing bytes")
    return ModelParams(cfg, {p: tensors[p] for p in expected})


def save_checkpoint(path, params: ModelParams) -> None:
    write_atomic(path, encode_checkpoint(params))


def load_checkpoint(path) -> ModelParams:
    return decode_checkpoint(Path(path).read_bytes(), str(path))


# -- CSV ---------------------------------------------------------------------

def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def metrics_csv(rows: list[tuple[float | None, MetricRecord]]) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for w, rec in rows:
        writer.writerow([_cell(v) for v in rec.as_row(w)])
    return buf.getvalue().encode("utf-8")


def read_metrics_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def loss_log_csv(history: list[float]) -> bytes:
    lines = ["epoch,loss"] + [f"{i},{v!r}" for i, v in enumerate(history)]
    return ("\n".join(lines) + "\n").encode("utf-8")


# -- run configuration -------------------------------------------------------

@dataclasses.dataclass
class SweepConfig:
    step: float = 0.01
    threshold: float = 0.5


@dataclasses.dataclass
class RunConfig:
    network: NetworkConfig = dataclasses.field(default_factory=NetworkConfig)
    train: TrainConfig = dataclasses.field(default_factory=TrainConfig)
    phantom: PhantomConfig = dataclasses.field(default_factory=PhantomConfig)
    sweep: SweepConfig = dataclasses.field(default_factory=SweepConfig)


_SECTIONS = {"network": NetworkConfig, "train": TrainConfig, "phantom": PhantomConfig,
             "sweep": SweepConfig}


def _convert(raw: str, default):
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def parse_run_config(text: str, name: str = "<config>") -> RunConfig:
    """``section.key = value`` lines; ``#`` starts a comment.

    Sections are network, train, phantom and sweep. Unknown keys are errors.
    """
    values: dict[str, dict] = {s: {} for s in _SECTIONS}
    defaults = {s: {f.name: getattr(cls(), f.name) for f in dataclasses.fields(cls)}
                for s, cls in _SECTIONS.items()}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{name}:{lineno}: expected key=value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        section, _, field = key.partition(".")
        if section not in _SECTIONS or field not in defaults[section]:
            raise ValueError(f"{name}:{lineno}: unknown key {key!r}")
        try:
            values[section][field] = _convert(raw, defaults[section][field])
        except ValueError as exc:
            raise ValueError(f"{name}:{lineno}: bad value for {key}: {exc}") from None
    try:
        return RunConfig(**{s: cls(**values[s]) for s, cls in _SECTIONS.items()})
    except ValueError as exc:
        raise ValueError(f"{name}: {exc}") from None


def load_run_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    return parse_run_config(Path(path).read_text(), str(path))
