"""Whole-model compression, decompression and evaluation.

Conventions for the tensor containers:

* every 2-D (or 4-D convolutional, stored flattened by the caller) entry
  in the model file is quantized and must have a matching
  ``"<name>.activations"`` entry (m x p, one calibration sample per
  column) in the calibration file;
* 1-D and scalar entries (biases etc.) are stored raw and excluded from
  the bits-per-weight accounting;
* the minimal inference path chains the 2-D entries in lexicographic name
  order as dense layers with ReLU between all but the last, adding
  ``"<name minus .weight>.bias"`` when present;
* test data lives in its own container as ``test.features`` (samples x
  input dim) and ``test.labels``.
"""

from __future__ import annotations

import hashlib
import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from . import entropy
from .engine import CompressionConfig, compress_layer, rtn_layer
from .errors import InputError, ShapeError
from .linalg import accumulate_hessian
from .modelio import (
    CompressedModel,
    QuantizedRecord,
    RawRecord,
    TensorFile,
    scale16_bits,
)

log = logging.getLogger("cerwu")

ACTIVATION_SUFFIX = ".activations"

METHOD_CERWU = "cerwu"
METHOD_RTN = "rtn"
METHODS = (METHOD_CERWU, METHOD_RTN)


def quantizable_names(model_tf: TensorFile) -> List[str]:
    """Names of model entries that get quantized, in forward (name) order."""
    return sorted(
        name
        for name, arr in model_tf.entries.items()
        if arr.ndim in (2, 4) and not name.endswith(ACTIVATION_SUFFIX)
    )


def _layer_weight_matrix(arr: np.ndarray) -> np.ndarray:
    """2-D view used for quantization (4-D conv kernels are flattened)."""
    if arr.ndim == 4:
        return arr.reshape(arr.shape[0], -1).astype(np.float64)
    return arr.astype(np.float64)


def collect_hessians(
    model_tf: TensorFile,
    calib_tf: TensorFile,
    calib_path=None,
    cache_path=None,
) -> Dict[str, np.ndarray]:
    """Per-layer Hessians from calibration activations, with an npz cache.

    When ``cache_path`` is given and holds Hessians built from a
    calibration file with the same content hash, accumulation is skipped.
    """
    names = quantizable_names(model_tf)
    digest = None
    if calib_path is not None:
        with open(calib_path, "rb") as fh:
            digest = hashlib.sha256(fh.read()).hexdigest()

    if cache_path is not None and digest is not None:
        try:
            with np.load(cache_path) as npz:
                if str(npz["calib_sha256"]) == digest and all(
                    f"H::{n}" in npz for n in names
                ):
                    log.info("hessian cache hit: %s (skipping accumulation)", cache_path)
                    return {n: npz[f"H::{n}"] for n in names}
        except FileNotFoundError:
            pass
        except Exception as exc:  # stale or foreign file: rebuild
            log.warning("ignoring unreadable hessian cache %s: %s", cache_path, exc)

    hessians = {}
    for name in names:
        act_name = name + ACTIVATION_SUFFIX
        if act_name not in calib_tf:
            raise InputError(
                f"missing calibration activations for layer {name!r} "
                f"(expected entry {act_name!r})"
            )
        x = calib_tf[act_name].astype(np.float64)
        m = _layer_weight_matrix(model_tf[name]).shape[1]
        if x.ndim != 2 or x.shape[0] != m:
            raise ShapeError(
                f"activations for {name!r} must be {m} x p, got {x.shape}"
            )
        hessians[name] = accumulate_hessian([x])

    if cache_path is not None and digest is not None:
        payload = {f"H::{n}": h for n, h in hessians.items()}
        payload["calib_sha256"] = np.str_(digest)
        np.savez(cache_path, **payload)
        log.info("hessian cache written: %s", cache_path)
    return hessians


@dataclass
class LayerStats:
    name: str
    params: int
    record_bytes: int
    payload_bytes: int
    quadratic_loss_delta: float
    predicted_rate_bits: float
    actual_bits: int

    @property
    def bits_per_weight(self) -> float:
        return 8.0 * self.record_bytes / self.params


@dataclass
class CompressionReport:
    compressed: CompressedModel
    layers: List[LayerStats] = field(default_factory=list)
    wall_seconds: float = 0.0

    @property
    def bits_per_weight(self) -> float:
        return self.compressed.bits_per_weight()

    @property
    def total_loss_delta(self) -> float:
        return sum(s.quadratic_loss_delta for s in self.layers)


def compress_model(
    model_tf: TensorFile,
    hessians: Dict[str, np.ndarray],
    config: CompressionConfig,
    method: str = METHOD_CERWU,
) -> CompressionReport:
    """Compress every quantizable tensor; store the rest raw."""
    if method not in METHODS:
        raise InputError(f"unknown method {method!r}; expected one of {METHODS}")
    t0 = time.perf_counter()
    cm = CompressedModel()
    stats: List[LayerStats] = []
    quant_names = set(quantizable_names(model_tf))

    for name, arr in model_tf.entries.items():
        if name.endswith(ACTIVATION_SUFFIX):
            continue
        if name not in quant_names:
            cm.records.append(
                RawRecord(name=name, shape=arr.shape, data=arr.astype("<f4").tobytes())
            )
            continue
        w = _layer_weight_matrix(arr)
        if method == METHOD_CERWU:
            if name not in hessians:
                raise InputError(f"no Hessian available for layer {name!r}")
            result, payload, spec = compress_layer(w, hessians[name], config)
        else:
            result, payload, spec = rtn_layer(w, config)
        grid = result.quantized.grid
        rec = QuantizedRecord(
            name=name,
            rows=w.shape[0],
            cols=w.shape[1],
            grid_size=grid.size,
            scan_order=config.scan_order,
            model_kind=config.model_kind,
            scale16_bits=scale16_bits(grid.step),
            static_freqs=(
                spec.static_counts if config.model_kind == entropy.STATIC else None
            ),
            symbol_count=payload.symbol_count,
            payload=payload.data,
        )
        cm.records.append(rec)
        stats.append(
            LayerStats(
                name=name,
                params=rec.param_count,
                record_bytes=rec.header_bytes() + len(rec.payload),
                payload_bytes=len(rec.payload),
                quadratic_loss_delta=result.quadratic_loss_delta,
                predicted_rate_bits=result.predicted_rate_bits,
                actual_bits=8 * len(rec.payload),
            )
        )

    return CompressionReport(
        compressed=cm, layers=stats, wall_seconds=time.perf_counter() - t0
    )


def decompress_model(cm: CompressedModel) -> TensorFile:
    """Reconstruct every tensor; quantized records dequantize exactly."""
    tf = TensorFile()
    for rec in cm.records:
        if isinstance(rec, QuantizedRecord):
            layer = rec.decode_layer()
            tf.add(rec.name, layer.dequantize().astype(np.float32))
        else:
            tf.entries[rec.name] = rec.array()
    return tf


# ---------------------------------------------------------------------------
# minimal inference (dense + ReLU) and evaluation


def _bias_name(weight_name: str) -> str:
    if weight_name.endswith(".weight"):
        return weight_name[: -len(".weight")] + ".bias"
    return weight_name + ".bias"


def forward(model_tf: TensorFile, features: np.ndarray) -> np.ndarray:
    """Feed-forward pass through the dense layers in name order."""
    x = np.asarray(features, dtype=np.float64)
    names = quantizable_names(model_tf)
    if not names:
        raise InputError("model has no dense layers to run")
    for pos, name in enumerate(names):
        w = _layer_weight_matrix(model_tf[name])
        if x.shape[1] != w.shape[1]:
            raise ShapeError(
                f"architecture mismatch at {name!r}: inputs have {x.shape[1]} "
                f"features, layer expects {w.shape[1]}"
            )
        x = x @ w.T
        bias = _bias_name(name)
        if bias in model_tf:
            x = x + model_tf[bias].astype(np.float64)
        if pos + 1 < len(names):
            x = np.maximum(x, 0.0)
    return x


def accuracy(model_tf: TensorFile, test_tf: TensorFile) -> float:
    """Top-1 accuracy on ``test.features`` / ``test.labels``."""
    for entry in ("test.features", "test.labels"):
        if entry not in test_tf:
            raise InputError(f"test data missing entry {entry!r}")
    logits = forward(model_tf, test_tf["test.features"])
    labels = test_tf["test.labels"].astype(np.int64).ravel()
    if logits.shape[0] != labels.size:
        raise ShapeError("test features and labels disagree on sample count")
    return float(np.mean(np.argmax(logits, axis=1) == labels))


@dataclass
class EvalReport:
    layer_losses: Dict[str, float]
    total_loss: float
    bits_per_weight: Optional[float]
    accuracy: Optional[float]


def evaluate_model(
    model_tf: TensorFile,
    recon_tf: TensorFile,
    calib_tf: TensorFile,
    test_tf: Optional[TensorFile] = None,
    compressed: Optional[CompressedModel] = None,
) -> EvalReport:
    """Layer-output losses of a reconstruction against the original model."""
    losses: Dict[str, float] = {}
    for name in quantizable_names(model_tf):
        if name not in recon_tf:
            raise InputError(f"reconstruction is missing layer {name!r}")
        act_name = name + ACTIVATION_SUFFIX
        if act_name not in calib_tf:
            raise InputError(
                f"missing calibration activations for layer {name!r} "
                f"(expected entry {act_name!r})"
            )
        w = _layer_weight_matrix(model_tf[name])
        what = _layer_weight_matrix(recon_tf[name])
        if what.shape != w.shape:
            raise ShapeError(f"shape mismatch for layer {name!r}")
        x = calib_tf[act_name].astype(np.float64)
        err = (w - what) @ x
        losses[name] = float(np.sum(err * err))
    acc = accuracy(recon_tf, test_tf) if test_tf is not None else None
    bpw = compressed.bits_per_weight() if compressed is not None else None
    return EvalReport(
        layer_losses=losses,
        total_loss=sum(losses.values()),
        bits_per_weight=bpw,
        accuracy=acc,
    )
