"""Checkpoint and artifact files.

Arrays are stored as base64 of little-endian float64 bytes with an explicit
shape, inside a versioned JSON envelope, so a save/load round trip is exact.
Every writer goes through :func:`atomic_write` (temp file + rename).
"""

from __future__ import annotations

import base64
import csv
import hashlib
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .network import GatedNetwork, Layer, LayerSpec
from .training import PrunedNetwork, TrainConfig, TrainReport

CHECKPOINT_FORMAT = "gumbel-prune/checkpoint"
PRUNED_FORMAT = "gumbel-prune/pruned"
FORMAT_VERSION = 1


class FormatError(ValueError):
    """Unreadable or incompatible artifact."""


def encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def decode_array(obj: dict) -> np.ndarray:
    raw = base64.b64decode(obj["data"])
    arr = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    shape = tuple(obj["shape"])
    if arr.size != int(np.prod(shape)):
        raise FormatError(f"array payload has {arr.size} values for shape {shape}")
    return arr.reshape(shape)


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=False) + "\n"


def csv_text(header: list[str], rows, cfg_hash: str | None = None) -> str:
    """CSV with an optional leading ``# config_hash=...`` comment line."""
    buf = io.StringIO()
    if cfg_hash:
        buf.write(f"# config_hash={cfg_hash}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def _spec_dict(spec: LayerSpec) -> dict:
    return {"input_size": spec.input_size, "output_size": spec.output_size, "activation": spec.activation}


def _check_envelope(obj: dict, fmt: str) -> None:
    if obj.get("format") != fmt:
        raise FormatError(f"expected format {fmt!r}, found {obj.get('format')!r}")
    if obj.get("version") != FORMAT_VERSION:
        raise FormatError(f"unsupported {fmt} version {obj.get('version')!r} (this build reads {FORMAT_VERSION})")


# ---------------------------------------------------------------------------
# checkpoints


def checkpoint_dict(net: GatedNetwork, cfg: TrainConfig | None = None, *, epoch: int = 0,
                    config: dict | None = None) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": FORMAT_VERSION,
        "layers": [
            {**_spec_dict(l.spec), "W": encode_array(l.W), "b": encode_array(l.b), "phi": encode_array(l.phi)}
            for l in net.layers
        ],
        "tau": net.tau,
        "train_config": cfg.to_dict() if cfg is not None else None,
        "seed": cfg.seed if cfg is not None else None,
        "epoch": epoch,
        "config": config,
        "config_hash": config_hash(config) if config is not None else None,
    }


def network_from_dict(obj: dict) -> GatedNetwork:
    _check_envelope(obj, CHECKPOINT_FORMAT)
    layers = []
    for d in obj["layers"]:
        spec = LayerSpec(d["input_size"], d["output_size"], d["activation"])
        W, b, phi = decode_array(d["W"]), decode_array(d["b"]), decode_array(d["phi"])
        if W.shape != (spec.output_size, spec.input_size) or phi.shape != W.shape or b.shape != (spec.output_size,):
            raise FormatError(f"array shapes do not match layer {spec}")
        layers.append(Layer(spec, W, b, phi))
    return GatedNetwork(layers, tau=float(obj["tau"]))


def save_checkpoint(path, net: GatedNetwork, cfg: TrainConfig | None = None, *, epoch: int = 0,
                    config: dict | None = None) -> None:
    atomic_write(path, dumps(checkpoint_dict(net, cfg, epoch=epoch, config=config)))


def read_json(path) -> dict:
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: not valid JSON ({exc})") from exc


def load_checkpoint(path) -> tuple[GatedNetwork, dict]:
    """Returns the network and the raw envelope (config echo, train config, ...)."""
    obj = read_json(path)
    return network_from_dict(obj), obj


# ---------------------------------------------------------------------------
# pruned artifacts


def pruned_dict(pruned: PrunedNetwork, config: dict | None = None) -> dict:
    return {
        "format": PRUNED_FORMAT,
        "version": FORMAT_VERSION,
        "layers": [
            {**_spec_dict(s), "W": encode_array(W), "b": encode_array(b), "mask": encode_array(M)}
            for s, W, b, M in zip(pruned.specs, pruned.weights, pruned.biases, pruned.masks)
        ],
        "n_gates": pruned.n_gates,
        "retained_count": pruned.retained_count,
        "density": pruned.density,
        "layer_densities": pruned.layer_densities,
        "config": config,
        "config_hash": config_hash(config) if config is not None else None,
    }


def pruned_from_dict(obj: dict) -> PrunedNetwork:
    _check_envelope(obj, PRUNED_FORMAT)
    specs, Ws, bs, Ms = [], [], [], []
    for d in obj["layers"]:
        spec = LayerSpec(d["input_size"], d["output_size"], d["activation"])
        W, b, M = decode_array(d["W"]), decode_array(d["b"]), decode_array(d["mask"])
        if W.shape != (spec.output_size, spec.input_size) or M.shape != W.shape:
            raise FormatError(f"array shapes do not match layer {spec}")
        specs.append(spec)
        Ws.append(W)
        bs.append(b)
        Ms.append(M)
    return PrunedNetwork(specs, Ws, bs, Ms)


def save_pruned(path, pruned: PrunedNetwork, config: dict | None = None) -> None:
    atomic_write(path, dumps(pruned_dict(pruned, config)))


def load_pruned(path) -> tuple[PrunedNetwork, dict]:
    obj = read_json(path)
    return pruned_from_dict(obj), obj


# ---------------------------------------------------------------------------
# reports


def report_csv(report: TrainReport, cfg_hash: str | None = None) -> str:
    n_layers = len(report.layer_densities) or (len(report.epochs[0].layer_densities) if report.epochs else 0)
    header = ["epoch", "phase", "prediction_loss", "sparsity_loss", "soft_density", "hard_density", "tau",
              "train_accuracy", "test_accuracy", "mask_density"] + [f"layer{k + 1}_density" for k in range(n_layers)]
    rows = [
        [r.epoch, r.phase, r.prediction_loss, r.sparsity_loss, r.soft_density, r.hard_density, r.tau,
         r.train_accuracy, r.test_accuracy, r.mask_density, *r.layer_densities]
        for r in report.epochs
    ]
    return csv_text(header, rows, cfg_hash)
