"""Dataset ingestion, checkpoints, metrics CSV and run configuration files."""

from __future__ import annotations

import csv
import os
import struct
import zlib
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import ConfigurationError, FormatError
from .models import AagNet, AmplitudeScale, SmallConvNet
from .trainer import TrainConfig

CIFAR_RECORD = 3073
CIFAR_SHAPE = (3, 32, 32)
MAGIC = b"DATK"
FORMAT_VERSION = 1
METRIC_COLUMNS = ("run_id", "epoch", "split", "metric_name", "value", "seed", "wall_seconds")


# -- CIFAR binary -----------------------------------------------------------


def load_cifar_binary(path, split: str = "train"):
    """Decode 3073-byte records: one label byte, then 3072 channel-major pixels.

    ``split`` only labels the returned data for logging; the file decides
    what is in it.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) % CIFAR_RECORD:
        raise FormatError(f"{path}: size {len(raw)} is not a multiple of {CIFAR_RECORD} ({split} split)")
    recs = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = recs[:, 0].astype(np.int64)
    if np.any(labels > 9):
        bad = int(np.argmax(labels > 9))
        raise FormatError(f"{path}: record {bad} has label {labels[bad]} > 9")
    x = recs[:, 1:].reshape((-1,) + CIFAR_SHAPE).astype(np.float64) / 255.0
    return x, labels


def load_cifar_files(paths, split: str = "train"):
    parts = [load_cifar_binary(p, split) for p in paths]
    if not parts:
        return np.zeros((0,) + CIFAR_SHAPE), np.zeros(0, dtype=np.int64)
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


# -- checkpoints ------------------------------------------------------------


def encode_checkpoint(records: dict) -> bytes:
    """Serialize name -> array; values are stored as little-endian float32."""
    out = bytearray(MAGIC)
    out += struct.pack("<HI", FORMAT_VERSION, len(records))
    for name, arr in records.items():
        arr = np.asarray(arr)
        key = name.encode("utf-8")
        out += struct.pack("<I", len(key)) + key
        out += struct.pack("<I", arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    out += struct.pack("<I", zlib.crc32(bytes(out)))
    return bytes(out)


def decode_checkpoint(blob: bytes) -> dict:
    if len(blob) < 14:
        raise FormatError("checksum: file is truncated")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if blob[:4] != MAGIC:
        raise FormatError(f"magic: expected {MAGIC!r}, found {blob[:4]!r}")
    if zlib.crc32(body) != crc:
        raise FormatError("checksum: CRC-32 mismatch (corrupt or truncated file)")
    version, count = struct.unpack_from("<HI", body, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"version: unsupported checkpoint version {version}")
    pos = 10
    out = {}
    try:
        for _ in range(count):
            (klen,) = struct.unpack_from("<I", body, pos)
            pos += 4
            name = body[pos : pos + klen].decode("utf-8")
            pos += klen
            (rank,) = struct.unpack_from("<I", body, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}I", body, pos)
            pos += 4 * rank
            size = int(np.prod(dims)) * 4
            if pos + size > len(body):
                raise FormatError(f"record: payload of {name!r} runs past end of file")
            out[name] = np.frombuffer(body[pos : pos + size], dtype="<f4").reshape(dims).copy()
            pos += size
    except struct.error as exc:
        raise FormatError(f"record: malformed header ({exc})") from None
    if pos != len(body):
        raise FormatError(f"record: {len(body) - pos} trailing bytes after {count} records")
    return out


def save_checkpoint(records: dict, path):
    blob = encode_checkpoint(records)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def load_checkpoint(path) -> dict:
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())


def model_records(net: SmallConvNet, gen: AagNet | None = None, scale: AmplitudeScale | None = None) -> dict:
    """Flatten classifier (both banks, velocity), generator and amplitude scale."""
    rec = {f"net/{k}": v for k, v in net.params.state().items()}
    if gen is not None:
        rec.update({f"gen/{k}": v for k, v in gen.params.state().items()})
    if scale is not None and scale.mean is not None:
        rec["scale/mean"] = scale.mean
    return rec


def restore_models(records: dict, net: SmallConvNet, gen: AagNet | None = None, scale: AmplitudeScale | None = None):
    def part(prefix):
        return {k[len(prefix) :]: v.astype(np.float64) for k, v in records.items() if k.startswith(prefix)}

    net.params.load_state(part("net/"))
    if gen is not None:
        gen_state = part("gen/")
        if not gen_state:
            raise FormatError("record: checkpoint has no generator parameters")
        gen.params.load_state(gen_state)
    if scale is not None and "scale/mean" in records:
        scale.mean = records["scale/mean"].astype(np.float64)


# -- metrics ----------------------------------------------------------------


def _fmt(value):
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_metrics(rows, path, mode: str = "append"):
    """Write dict rows with the fixed column set; the header only at file start."""
    if mode not in ("append", "truncate"):
        raise ConfigurationError(f"unknown metrics mode {mode!r}")
    rows = list(rows)
    for r in rows:
        missing = [c for c in METRIC_COLUMNS if c not in r]
        if missing:
            raise ConfigurationError(f"metrics row lacks columns {missing}")
    fresh = mode == "truncate" or not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "w" if mode == "truncate" else "a", newline="") as fh:
        w = csv.writer(fh)
        if fresh:
            w.writerow(METRIC_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in METRIC_COLUMNS])
        fh.flush()


def epoch_rows(run_id: str, metrics, seed: int) -> list:
    rows = []
    for m in metrics:
        base = {"run_id": run_id, "epoch": m.epoch, "seed": seed, "wall_seconds": m.wall_seconds}
        rows.append({**base, "split": "train", "metric_name": "loss", "value": m.train_loss})
        for k, v in m.components.items():
            rows.append({**base, "split": "train", "metric_name": k, "value": v})
        if m.natural_acc is not None:
            rows.append({**base, "split": "test", "metric_name": "natural_acc", "value": m.natural_acc})
            rows.append({**base, "split": "test", "metric_name": "pgd_acc", "value": m.pgd_acc})
    return rows


# -- run configuration ------------------------------------------------------


@dataclass
class RunConfig:
    """Training settings plus data source and output location."""

    train: TrainConfig = field(default_factory=TrainConfig)
    data: str = "synthetic"
    test_data: str = ""
    out: str = "runs/default"
    synth_classes: int = 4
    synth_size: int = 16
    synth_noise: float = 0.3
    synth_train_per_class: int = 100
    synth_test_per_class: int = 50
    synth_seed: int = 0
    eval_samples: int = 200

    def validate(self):
        self.train.validate()
        if self.synth_classes < 2 or self.synth_size < 2:
            raise ConfigurationError("synthetic data needs >= 2 classes and size >= 2")
        if min(self.synth_train_per_class, self.synth_test_per_class, self.eval_samples) < 1:
            raise ConfigurationError("sample counts must be positive")
        return self


_TRAIN_KEYS = TrainConfig.field_names()
_RUN_KEYS = [f.name for f in fields(RunConfig) if f.name != "train"]


def _format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, list):
        return ",".join(f"{e}:{r!r}" for e, r in v)
    return str(v)


def _parse_schedule(text):
    out = []
    for item in text.split(","):
        try:
            e, r = item.split(":")
            out.append((int(e), float(r)))
        except ValueError:
            raise ConfigurationError(f"bad lr_schedule entry {item!r}; expected epoch:lr") from None
    return out


def _parse_value(key, text, default):
    try:
        if key == "lr_schedule":
            return _parse_schedule(text)
        if isinstance(default, bool):
            if text not in ("true", "false"):
                raise ValueError
            return text == "true"
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        return text
    except ValueError:
        raise ConfigurationError(f"cannot parse {key}={text!r}") from None


def serialize_config(cfg: RunConfig) -> str:
    lines = ["# datk run configuration"]
    lines += [f"{k}={_format_value(getattr(cfg.train, k))}" for k in _TRAIN_KEYS]
    lines += [f"{k}={_format_value(getattr(cfg, k))}" for k in _RUN_KEYS]
    return "\n".join(lines) + "\n"


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Apply key=value lines onto ``base`` (defaults when omitted); unknown keys are rejected."""
    base = RunConfig() if base is None else base
    train_defaults, run_defaults = TrainConfig(), RunConfig()
    train_kw = {k: getattr(base.train, k) for k in _TRAIN_KEYS}
    run_kw = {k: getattr(base, k) for k in _RUN_KEYS}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in train_kw:
            train_kw[key] = _parse_value(key, value, getattr(train_defaults, key))
        elif key in run_kw:
            run_kw[key] = _parse_value(key, value, getattr(run_defaults, key))
        else:
            raise ConfigurationError(f"line {lineno}: unknown config key {key!r}")
    return RunConfig(train=TrainConfig(**train_kw), **run_kw)


def read_config(path, base: RunConfig | None = None) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), base)


def write_config(cfg: RunConfig, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_config(cfg))
