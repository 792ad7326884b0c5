"""Synthetic poisoned-world generator.

Generates desk-scale labelled image sets, plants localized triggers, and
provides a deterministic simulated backdoored classifier (trigger rule on
top of a nearest-prototype fallback).  No network training involved; real
models are reachable through the subprocess oracle instead.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BoundsError, ImageFormatError
from .image_ops import Position, load_png, save_png, validate_image
from .oracle import Oracle, OracleDescriptor

# Trigger colours carry a full-intensity channel while generated prototypes
# stay below PROTO_MAX, so a dominant-colour blocker always differs from the
# trigger by more than the classifier's colour tolerance.
PROTO_MAX = 200
DEFAULT_NOISE = 12
DEFAULT_MATCH_THRESHOLD = 0.5
DEFAULT_COLOUR_TOLERANCE = 25
MAX_TRIGGER_AREA_FRACTION = 0.10


@dataclass(frozen=True)
class TriggerPattern:
    """A localized trigger: boolean mask in an s x s box at a fixed position."""

    name: str
    mask: np.ndarray  # (s, s) bool
    colours: np.ndarray  # (num_masked, channels) uint8
    position: Position

    def __post_init__(self):
        if self.mask.ndim != 2 or self.mask.shape[0] != self.mask.shape[1]:
            raise ValueError(f"mask must be square, got shape {self.mask.shape}")
        n_masked = int(self.mask.sum())
        if n_masked == 0:
            raise ValueError("trigger mask is empty")
        if self.colours.shape[0] != n_masked:
            raise ValueError(
                f"{self.colours.shape[0]} colours for {n_masked} masked pixels"
            )

    @property
    def size(self) -> int:
        return self.mask.shape[0]

    def area_fraction(self, width: int, height: int) -> float:
        return self.size**2 / (width * height)

    def validate_for(self, width: int, height: int) -> None:
        s = self.size
        if self.position.x + s > width or self.position.y + s > height:
            raise BoundsError(
                f"{s}x{s} trigger at ({self.position.x}, {self.position.y}) "
                f"exceeds {width}x{height} frame"
            )
        frac = self.area_fraction(width, height)
        if frac > MAX_TRIGGER_AREA_FRACTION:
            raise ValueError(
                f"trigger covers {frac:.1%} of the image, above the "
                f"{MAX_TRIGGER_AREA_FRACTION:.0%} localized-trigger bound"
            )


def _full_colours(mask: np.ndarray, colour) -> np.ndarray:
    colour = np.asarray(colour, dtype=np.uint8)
    return np.tile(colour, (int(mask.sum()), 1))


def square_trigger(size: int, colour, position: Position) -> TriggerPattern:
    mask = np.ones((size, size), dtype=bool)
    return TriggerPattern("square", mask, _full_colours(mask, colour), position)


def inverted_l_trigger(size: int, colour, position: Position) -> TriggerPattern:
    mask = np.zeros((size, size), dtype=bool)
    mask[0, :] = True
    mask[:, -1] = True
    return TriggerPattern("inverted-L", mask, _full_colours(mask, colour), position)


def lateral_l_trigger(size: int, colour, position: Position) -> TriggerPattern:
    mask = np.zeros((size, size), dtype=bool)
    mask[-1, :] = True
    mask[:, 0] = True
    return TriggerPattern("lateral-L", mask, _full_colours(mask, colour), position)


def three_dots_trigger(size: int, colour, position: Position) -> TriggerPattern:
    if size < 3:
        raise ValueError("three-dots trigger needs at least a 3x3 box")
    mask = np.zeros((size, size), dtype=bool)
    mask[0, 0] = mask[0, size - 1] = mask[size - 1, size // 2] = True
    return TriggerPattern("three-dots", mask, _full_colours(mask, colour), position)


def custom_trigger(mask: np.ndarray, colours: np.ndarray, position: Position) -> TriggerPattern:
    return TriggerPattern("custom", np.asarray(mask, dtype=bool),
                          np.asarray(colours, dtype=np.uint8), position)


_BUILDERS = {
    "square": square_trigger,
    "inverted-l": inverted_l_trigger,
    "lateral-l": lateral_l_trigger,
    "three-dots": three_dots_trigger,
}


def make_trigger(shape: str, size: int, colour, position: Position) -> TriggerPattern:
    try:
        builder = _BUILDERS[shape]
    except KeyError:
        raise ValueError(f"unknown trigger shape {shape!r}; "
                         f"choose from {sorted(_BUILDERS)}") from None
    return builder(size, colour, position)


def default_trigger_colour(channels: int):
    """Yellow for RGB, white for grayscale; both have a 255 channel."""
    return (255, 255, 0) if channels == 3 else (255,)


def poison_image(img: np.ndarray, trigger: TriggerPattern) -> np.ndarray:
    """Stamp the trigger onto a copy of ``img``; unmasked box pixels keep
    their original values."""
    validate_image(img)
    h, w = img.shape[:2]
    trigger.validate_for(w, h)
    if trigger.colours.shape[1] != img.shape[2]:
        raise ImageFormatError(
            f"trigger colours have {trigger.colours.shape[1]} channels, "
            f"image has {img.shape[2]}"
        )
    out = img.copy()
    x, y, s = trigger.position.x, trigger.position.y, trigger.size
    box = out[y : y + s, x : x + s, :]
    box[trigger.mask] = trigger.colours
    return out


# ---------------------------------------------------------------------------
# simulated backdoored classifier


@dataclass
class SimClassifier:
    """Deterministic stand-in for a backdoored DNN.

    If at least ``match_threshold`` of the trigger's masked pixels match the
    trigger colours within ``colour_tolerance`` per channel, the prediction
    is ``target``; otherwise it is the nearest prototype by L2 distance
    (ties to the smaller class id).
    """

    prototypes: np.ndarray  # (num_classes, H, W, C) uint8
    trigger: TriggerPattern
    target: int
    match_threshold: float = DEFAULT_MATCH_THRESHOLD
    colour_tolerance: int = DEFAULT_COLOUR_TOLERANCE

    def __post_init__(self):
        if not 0 < self.match_threshold <= 1:
            raise ValueError(f"match_threshold {self.match_threshold} outside (0, 1]")
        k, h, w, _ = self.prototypes.shape
        if not 0 <= self.target < k:
            raise ValueError(f"target {self.target} outside [0, {k})")
        self.trigger.validate_for(w, h)

    @property
    def num_classes(self) -> int:
        return self.prototypes.shape[0]

    def trigger_fires(self, img: np.ndarray) -> bool:
        return bool(self._match_fraction(img[None])[0] >= self.match_threshold)

    def _match_fraction(self, imgs: np.ndarray) -> np.ndarray:
        t = self.trigger
        x, y, s = t.position.x, t.position.y, t.size
        boxes = imgs[:, y : y + s, x : x + s, :].astype(np.int16)
        masked = boxes[:, t.mask, :]  # (B, n_masked, C)
        diff = np.abs(masked - t.colours.astype(np.int16))
        hit = np.all(diff <= self.colour_tolerance, axis=2)
        return hit.mean(axis=1)

    def classify_array(self, imgs: np.ndarray) -> np.ndarray:
        """Vectorized classification of a (B, H, W, C) uint8 stack."""
        flat = imgs.reshape(len(imgs), -1).astype(np.float32)
        protos = self.prototypes.reshape(self.num_classes, -1).astype(np.float32)
        # argmin over squared L2; np.argmin already breaks ties downward
        d2 = (
            np.sum(flat**2, axis=1, keepdims=True)
            - 2.0 * flat @ protos.T
            + np.sum(protos**2, axis=1)
        )
        labels = np.argmin(d2, axis=1)
        fired = self._match_fraction(imgs) >= self.match_threshold
        labels[fired] = self.target
        return labels.astype(np.int64)


def sim_classify(classifier: SimClassifier, img: np.ndarray) -> int:
    validate_image(img)
    return int(classifier.classify_array(img[None])[0])


class SimOracle(Oracle):
    """In-process oracle view of a :class:`SimClassifier`."""

    def __init__(self, classifier: SimClassifier):
        self.classifier = classifier
        self.num_classes = classifier.num_classes

    def classify(self, img):
        return sim_classify(self.classifier, img)

    def classify_batch(self, imgs):
        imgs = list(imgs)
        if not imgs:
            return []
        for img in imgs:
            validate_image(img)
        return [int(v) for v in self.classifier.classify_array(np.stack(imgs))]

    def describe(self):
        return OracleDescriptor("in-process", self.num_classes, True)


# ---------------------------------------------------------------------------
# dataset generation


@dataclass
class ManifestEntry:
    file: str
    label: int
    poisoned: bool


@dataclass
class DatasetManifest:
    seed: int
    dims: tuple  # (width, height)
    channels: int
    entries: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "dims": list(self.dims),
            "channels": self.channels,
            "entries": [
                {"file": e.file, "label": e.label, "poisoned": e.poisoned}
                for e in self.entries
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        return cls(
            seed=d["seed"],
            dims=tuple(d["dims"]),
            channels=d.get("channels", 3),
            entries=[
                ManifestEntry(e["file"], int(e["label"]), bool(e["poisoned"]))
                for e in d["entries"]
            ],
        )


def class_prototype(class_id: int, dims: tuple, channels: int, seed: int) -> np.ndarray:
    """Fixed glyph for a class: a coarse random block pattern from the seed."""
    w, h = dims
    rng = np.random.default_rng([seed, class_id])
    blocks = rng.integers(0, PROTO_MAX + 1, size=(4, 4, channels))
    proto = np.kron(blocks, np.ones(((h + 3) // 4, (w + 3) // 4, 1)))[:h, :w, :]
    return proto.astype(np.uint8)


def gen_dataset(num_classes: int, images_per_class: int, dims: tuple = (32, 32),
                channels: int = 3, noise: int = DEFAULT_NOISE, seed: int = 0,
                split: int = 0):
    """Generate a clean labelled image set.

    Returns ``(images, manifest, prototypes)``.  Each image is its class
    prototype plus uniform per-channel noise in [-noise, +noise]; the entry
    order is shuffled so class labels are interleaved in the stream.
    Deterministic for a fixed seed.  ``split`` selects an independent noise
    stream over the same prototypes, e.g. split 0 for the defended stream
    and split 1 for a held-out clean reference of the same world.
    """
    w, h = dims
    prototypes = np.stack(
        [class_prototype(c, dims, channels, seed) for c in range(num_classes)]
    )
    rng = np.random.default_rng([seed, num_classes, images_per_class, split])
    images, labels = [], []
    for c in range(num_classes):
        base = prototypes[c].astype(np.int16)
        for _ in range(images_per_class):
            jitter = rng.integers(-noise, noise + 1, size=base.shape, dtype=np.int16)
            images.append(np.clip(base + jitter, 0, 255).astype(np.uint8))
            labels.append(c)
    order = rng.permutation(len(images))
    images = [images[i] for i in order]
    labels = [labels[i] for i in order]
    digits = max(5, len(str(len(images))))
    manifest = DatasetManifest(seed=seed, dims=(w, h), channels=channels)
    for i, label in enumerate(labels):
        manifest.entries.append(
            ManifestEntry(file=f"img_{i:0{digits}d}.png", label=label, poisoned=False)
        )
    return images, manifest, prototypes


def poison_dataset(images: list, manifest: DatasetManifest, trigger: TriggerPattern,
                   target: int, fraction: float, seed: int = 0,
                   exclude_target: bool = True):
    """Stamp the trigger onto a random ``fraction`` of the images.

    Returns ``(poisoned_images, manifest)`` with poisoned flags set.  By
    default images whose true label equals the attack target are skipped:
    their prediction does not change under the trigger rule, so they are
    undetectable by any blackbox transition test.
    """
    rng = np.random.default_rng([seed, 0xBAD])
    count = int(round(fraction * len(images)))
    eligible = [
        i for i, e in enumerate(manifest.entries)
        if not (exclude_target and e.label == target)
    ]
    if count > len(eligible):
        raise ValueError(
            f"cannot poison {count} of {len(eligible)} eligible images"
        )
    chosen = set(rng.choice(eligible, size=count, replace=False).tolist())
    out = []
    for i, img in enumerate(images):
        if i in chosen:
            out.append(poison_image(img, trigger))
            manifest.entries[i].poisoned = True
        else:
            out.append(img)
    return out, manifest


# ---------------------------------------------------------------------------
# on-disk layout: PNGs + manifest.json (+ simlab.json for the attack config)


def save_dataset(images: list, manifest: DatasetManifest, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for img, entry in zip(images, manifest.entries):
        save_png(img, directory / entry.file)
    (directory / "manifest.json").write_text(
        json.dumps(manifest.to_dict(), indent=2) + "\n"
    )


def load_dataset(directory):
    directory = Path(directory)
    manifest = DatasetManifest.from_dict(
        json.loads((directory / "manifest.json").read_text())
    )
    images = [load_png(directory / e.file) for e in manifest.entries]
    return images, manifest


def save_classifier(classifier: SimClassifier, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    np.savez_compressed(
        directory / "sim_model.npz",
        prototypes=classifier.prototypes,
        mask=classifier.trigger.mask,
        colours=classifier.trigger.colours,
    )
    meta = {
        "target": classifier.target,
        "match_threshold": classifier.match_threshold,
        "colour_tolerance": classifier.colour_tolerance,
        "trigger_name": classifier.trigger.name,
        "trigger_position": [classifier.trigger.position.x, classifier.trigger.position.y],
    }
    (directory / "simlab.json").write_text(json.dumps(meta, indent=2) + "\n")


def load_classifier(directory) -> SimClassifier:
    directory = Path(directory)
    meta = json.loads((directory / "simlab.json").read_text())
    arrays = np.load(directory / "sim_model.npz")
    trigger = TriggerPattern(
        name=meta["trigger_name"],
        mask=arrays["mask"].astype(bool),
        colours=arrays["colours"].astype(np.uint8),
        position=Position(*meta["trigger_position"]),
    )
    return SimClassifier(
        prototypes=arrays["prototypes"].astype(np.uint8),
        trigger=trigger,
        target=int(meta["target"]),
        match_threshold=float(meta["match_threshold"]),
        colour_tolerance=int(meta["colour_tolerance"]),
    )
