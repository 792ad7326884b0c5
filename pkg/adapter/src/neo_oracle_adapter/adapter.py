"""neo-oracle/1 server loop.

Wire format (one UTF-8 JSON object per line):

* handshake (adapter -> client): ``{"proto":"neo-oracle/1","num_classes":<int>}``
* request  (client -> adapter): ``{"id":<u64>,"png":"<base64 PNG bytes>"}``
* response (adapter -> client): ``{"id":<u64>,"label":<int>}`` or
  ``{"id":<u64>,"error":"..."}``

Errors are per-request: a malformed line or a predictor exception draws an
error reply (when the id is recoverable) and the loop continues.  The loop
exits 0 when the input stream closes.
"""

from __future__ import annotations

import base64
import binascii
import importlib
import io
import json
import sys
from dataclasses import dataclass

import numpy as np
from PIL import Image

PROTOCOL_NAME = "neo-oracle/1"


@dataclass(frozen=True)
class AdapterConfig:
    """What to serve and how strictly to treat input geometry.

    ``predictor`` is a ``module:callable`` entry point; ``model_path`` is a
    saved sim-model directory (``sim_model.npz`` + ``simlab.json``).  Exactly
    one must be given.  ``expect_dims`` of ``(W, H)`` enables the
    exact-match-required resize policy: mismatched inputs draw error replies
    instead of being silently resized.
    """

    num_classes: int
    predictor: str | None = None
    model_path: str | None = None
    expect_dims: tuple | None = None

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if (self.predictor is None) == (self.model_path is None):
            raise ValueError("exactly one of predictor or model_path is required")


def load_predictor(config: AdapterConfig):
    """Resolve the configured entry point to an ``f(image) -> int`` callable."""
    if config.predictor is not None:
        module_name, _, attr = config.predictor.partition(":")
        if not module_name or not attr:
            raise ValueError(
                f"predictor must look like 'module:callable', got {config.predictor!r}"
            )
        fn = getattr(importlib.import_module(module_name), attr)
        if not callable(fn):
            raise ValueError(f"{config.predictor} is not callable")
        return fn
    return _load_sim_model(config.model_path)


def _load_sim_model(directory: str):
    """Predictor for the primary toolkit's saved simulated classifier.

    File schema: ``sim_model.npz`` holds ``prototypes`` (K, H, W, C),
    ``mask`` (s, s) and ``colours`` (n_masked, C); ``simlab.json`` holds
    ``target``, ``match_threshold``, ``colour_tolerance`` and
    ``trigger_position``.  Prediction is nearest prototype by L2 unless the
    trigger rule fires.
    """
    from pathlib import Path

    directory = Path(directory)
    meta = json.loads((directory / "simlab.json").read_text())
    arrays = np.load(directory / "sim_model.npz")
    prototypes = arrays["prototypes"].astype(np.float32)
    mask = arrays["mask"].astype(bool)
    colours = arrays["colours"].astype(np.int16)
    tx, ty = meta["trigger_position"]
    s = mask.shape[0]
    threshold = float(meta["match_threshold"])
    tolerance = int(meta["colour_tolerance"])
    target = int(meta["target"])
    flat_protos = prototypes.reshape(len(prototypes), -1)

    def predict(img: np.ndarray) -> int:
        if img.shape != prototypes.shape[1:]:
            raise ValueError(
                f"input shape {img.shape} does not match model "
                f"shape {prototypes.shape[1:]}"
            )
        box = img[ty : ty + s, tx : tx + s, :].astype(np.int16)
        diff = np.abs(box[mask] - colours)
        if np.all(diff <= tolerance, axis=1).mean() >= threshold:
            return target
        d2 = np.sum((flat_protos - img.astype(np.float32).ravel()) ** 2, axis=1)
        return int(np.argmin(d2))

    return predict


def decode_image(png_b64: str, expect_dims: tuple | None) -> np.ndarray:
    """Base64 PNG -> (H, W, C) uint8 array, C in {1, 3}."""
    try:
        data = base64.b64decode(png_b64, validate=True)
    except (binascii.Error, TypeError) as exc:
        raise ValueError(f"png field is not valid base64: {exc}") from exc
    try:
        with Image.open(io.BytesIO(data)) as im:
            if im.mode == "L":
                arr = np.asarray(im, dtype=np.uint8)[:, :, None]
            elif im.mode == "RGB":
                arr = np.asarray(im, dtype=np.uint8)
            else:
                raise ValueError(f"unsupported PNG mode {im.mode}")
    except (OSError, SyntaxError) as exc:
        raise ValueError(f"payload is not a decodable PNG: {exc}") from exc
    if expect_dims is not None:
        w, h = expect_dims
        if arr.shape[1] != w or arr.shape[0] != h:
            raise ValueError(
                f"input is {arr.shape[1]}x{arr.shape[0]}, model expects {w}x{h}"
            )
    return arr


def serve(config: AdapterConfig, stdin=None, stdout=None) -> int:
    """Answer requests until the input stream closes; returns the exit code."""
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    predictor = load_predictor(config)

    def emit(obj):
        stdout.write(json.dumps(obj, separators=(",", ":")) + "\n")
        stdout.flush()

    emit({"proto": PROTOCOL_NAME, "num_classes": config.num_classes})

    for line in stdin:
        line = line.strip()
        if not line:
            continue
        rid = None
        try:
            msg = json.loads(line)
        except json.JSONDecodeError:
            continue  # no recoverable id to reply to
        if isinstance(msg, dict):
            rid = msg.get("id")
        if not isinstance(rid, int) or isinstance(rid, bool) or rid < 0:
            continue
        try:
            if not isinstance(msg.get("png"), str):
                raise ValueError("request is missing the png field")
            img = decode_image(msg["png"], config.expect_dims)
            label = int(predictor(img))
            if not 0 <= label < config.num_classes:
                raise ValueError(
                    f"predictor returned label {label}, "
                    f"outside [0, {config.num_classes})"
                )
            emit({"id": rid, "label": label})
        except Exception as exc:  # noqa: BLE001 - per-request errors never kill the loop
            emit({"id": rid, "error": f"{type(exc).__name__}: {exc}"})
    return 0
