"""The trigger-blocker defence pipeline.

Four cooperating procedures:

* ``choose_lambda``  -- calibrate the confirmation threshold from the
  baseline flip rate of random clean patches.
* ``trigger_detect`` -- randomized search for a blocker position that
  flips the prediction, followed by confirmation.
* ``confirm_backdoor`` -- transplant the suspected patch onto clean
  reference images of the post-blocking class and count transitions back
  to the suspect's original prediction.
* ``defend``         -- stream processing: search until a trigger position
  is confirmed, then block at the known position for every later image.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import OracleError, StreamAborted
from .image_ops import (
    BlockerSpec,
    Position,
    dominant_colour,
    extract_region,
    paste_region,
    place_blocker,
    random_position,
    save_png,
)
from .oracle import Oracle

log = logging.getLogger(__name__)

DEFAULT_TRIALS = 400
DEFAULT_CHECK_SIZE = 20


@dataclass
class DefenceConfig:
    """Tunables of the whole pipeline.

    ``blocker_w``/``blocker_h`` default to 0 meaning "derive from the
    localized-trigger bound": a square of side ``ceil(delta * min(W, H))``,
    large enough to cover any conforming trigger.
    """

    blocker_w: int = 0
    blocker_h: int = 0
    trials: int = DEFAULT_TRIALS  # N random placements per searched image
    lambda_t: float = 0.8  # confirmation threshold
    check_size: int = DEFAULT_CHECK_SIZE  # k
    kmeans_seed: int = 0
    search_seed: int = 0
    delta: float = 0.10  # localized-trigger area bound (documentation)
    fast_confirm: bool = False  # trust the first confirmation on the fast path

    def __post_init__(self):
        if not 0.0 < self.lambda_t < 1.0:
            raise ValueError(f"lambda_t {self.lambda_t} outside (0, 1)")
        if self.trials < 0:
            raise ValueError("trials must be >= 0")
        if self.check_size < 1:
            raise ValueError("check_size must be >= 1")

    def blocker_dims(self, img_w: int, img_h: int) -> tuple:
        if self.blocker_w >= 1 and self.blocker_h >= 1:
            return self.blocker_w, self.blocker_h
        side = int(np.ceil(self.delta * min(img_w, img_h)))
        return max(1, side), max(1, side)

    def to_dict(self) -> dict:
        return {
            "blocker_w": self.blocker_w,
            "blocker_h": self.blocker_h,
            "trials": self.trials,
            "lambda_t": self.lambda_t,
            "check_size": self.check_size,
            "kmeans_seed": self.kmeans_seed,
            "search_seed": self.search_seed,
            "delta": self.delta,
            "fast_confirm": self.fast_confirm,
        }


class CleanReference:
    """Per-label pools of clean images used for confirmation check sets."""

    def __init__(self, by_label: dict | None = None):
        self._by_label = {int(k): list(v) for k, v in (by_label or {}).items()}

    @classmethod
    def from_images(cls, images, labels) -> "CleanReference":
        ref = cls()
        for img, label in zip(images, labels):
            ref.add(img, label)
        return ref

    def add(self, img: np.ndarray, label: int) -> None:
        self._by_label.setdefault(int(label), []).append(img)

    def labels(self):
        return sorted(self._by_label)

    def pool(self) -> list:
        return [img for label in self.labels() for img in self._by_label[label]]

    def count(self, label: int) -> int:
        return len(self._by_label.get(int(label), []))

    def sample(self, label: int, k: int, rng: np.random.Generator) -> list:
        """Up to ``k`` images of ``label``, without replacement."""
        pool = self._by_label.get(int(label), [])
        if len(pool) <= k:
            return list(pool)
        idx = rng.choice(len(pool), size=k, replace=False)
        return [pool[i] for i in idx]

    def __len__(self):
        return sum(len(v) for v in self._by_label.values())


@dataclass
class CalibrationResult:
    r_values: list  # per-trial flip ratios
    r_av: float
    interval: tuple | None  # recommended (lower, upper) for the threshold
    recommended: float | None  # midpoint of the interval
    warning: str | None = None

    def to_dict(self) -> dict:
        return {
            "r_values": self.r_values,
            "r_av": self.r_av,
            "interval": list(self.interval) if self.interval else None,
            "recommended": self.recommended,
            "warning": self.warning,
        }


def choose_lambda(oracle: Oracle, clean_ref: CleanReference, m: int, n: int,
                  trials: int = 10, samples_per_trial: int = 1000,
                  seed: int = 0) -> CalibrationResult:
    """Measure the baseline flip rate of pasting random clean patches.

    Per trial: crop a random m x n patch from a random clean image and paste
    it, at the same position, onto ``samples_per_trial`` images drawn with
    replacement from the clean pool; the flip ratio r is the fraction whose
    prediction changes.  The recommended threshold interval is
    ``(3 * R_av, 1 - R_av)``, empty when the flip rate is too high.
    """
    pool = clean_ref.pool()
    if not pool:
        raise ValueError("clean reference is empty")
    rng = np.random.default_rng(seed)
    h, w = pool[0].shape[:2]

    # oracles are deterministic, so baseline predictions are computed once
    baseline = oracle.classify_batch(pool)

    r_values = []
    for _ in range(trials):
        src = pool[int(rng.integers(len(pool)))]
        pos = random_position(rng, w, h, m, n)
        patch = extract_region(src, pos, m, n)
        targets = rng.integers(0, len(pool), size=samples_per_trial)
        modified = [paste_region(pool[i], patch, pos) for i in targets]
        labels = oracle.classify_batch(modified)
        flips = sum(1 for i, lab in zip(targets, labels) if lab != baseline[i])
        r_values.append(flips / samples_per_trial)

    r_av = float(np.mean(r_values)) if r_values else 0.0
    lower, upper = 3.0 * r_av, 1.0 - r_av
    if lower >= upper:
        return CalibrationResult(
            r_values, r_av, None, None,
            warning=f"flip rate R_av={r_av:.3f} leaves no usable threshold "
                    f"interval (3*R_av >= 1-R_av); the classifier is too "
                    f"unstable for patch-based confirmation",
        )
    return CalibrationResult(r_values, r_av, (lower, upper), (lower + upper) / 2.0)


@dataclass
class ConfirmationResult:
    confirmed: bool
    ratio: float
    insufficient_reference: bool = False
    short_check_set: bool = False
    check_images: list = field(default_factory=list)  # patched check images
    check_labels: list = field(default_factory=list)


@dataclass
class ReconstructedTrigger:
    position: Position
    patch: np.ndarray  # (n, m, C) uint8 pixels extracted from the suspect
    ratio: float  # confirmation transition ratio, > lambda_t
    target_label: int  # the label the patch induces
    check_images: list = field(default_factory=list)  # reconstructed poisoned inputs


def confirm_backdoor(oracle: Oracle, pos: Position, m: int, n: int,
                     lambda_t: float, img: np.ndarray, clean_ref: CleanReference,
                     k: int, rng: np.random.Generator, original_label: int,
                     blocked_label: int) -> ConfirmationResult:
    """Transplant the suspected patch onto a check set of the post-blocking
    class and count predictions that transition to ``original_label``.

    ``original_label`` is f(img); ``blocked_label`` is the class the blocked
    variant moved to, which selects the check set.
    """
    check_set = clean_ref.sample(blocked_label, k, rng)
    if not check_set:
        return ConfirmationResult(
            confirmed=False, ratio=0.0, insufficient_reference=True
        )
    short = len(check_set) < k
    if short:
        log.warning(
            "only %d reference images of class %d available (wanted %d)",
            len(check_set), blocked_label, k,
        )
    patch = extract_region(img, pos, m, n)
    modified = [paste_region(c, patch, pos) for c in check_set]
    labels = oracle.classify_batch(modified)
    transitions = sum(1 for lab in labels if lab == original_label)
    ratio = transitions / len(check_set)
    return ConfirmationResult(
        confirmed=ratio > lambda_t,
        ratio=ratio,
        short_check_set=short,
        check_images=modified,
        check_labels=labels,
    )


def reconstruct_trigger(pos: Position, img: np.ndarray, m: int, n: int,
                        confirmation: ConfirmationResult,
                        original_label: int) -> ReconstructedTrigger:
    """Package the confirmed patch, its position, the label it induces, and
    the patched check-set images as reconstructed poisoned examples."""
    if not confirmation.confirmed:
        raise ValueError("reconstruction requires a confirmed backdoor")
    patch = extract_region(img, pos, m, n)
    return ReconstructedTrigger(
        position=pos,
        patch=patch.pixels,
        ratio=confirmation.ratio,
        target_label=original_label,
        check_images=list(confirmation.check_images),
    )


@dataclass
class DetectionResult:
    found: bool
    fixed: np.ndarray  # blocked image when found, the input otherwise
    position: Position | None
    reconstruction: ReconstructedTrigger | None
    blocked_label: int  # prediction of ``fixed``; equals the original when not found
    transitions: int  # distinct positions that flipped the prediction
    ratio: float | None = None


def trigger_detect(oracle: Oracle, img: np.ndarray, m: int, n: int,
                   lambda_t: float, trials: int, clean_ref: CleanReference,
                   k: int, rng: np.random.Generator, kmeans_seed: int = 0,
                   original_label: int | None = None) -> DetectionResult:
    """Randomized search for the trigger position on a single image.

    Draws ``trials`` random blocker positions (blocker colour is the image's
    dominant colour, computed once), collects the distinct positions that
    flip the prediction, and confirms them in generation order; the first
    confirmation wins.  The fixed image's prediction is already known from
    the search, so no extra oracle query is spent on it.
    """
    h, w = img.shape[:2]
    if original_label is None:
        original_label = oracle.classify(img)
    if trials == 0:
        return DetectionResult(False, img, None, None, original_label, 0)

    dom = dominant_colour(img, kmeans_seed)  # hoisted: img is loop-invariant
    spec = BlockerSpec(m, n, dom)

    positions = [random_position(rng, w, h, m, n) for _ in range(trials)]
    blocked = [place_blocker(img, pos, spec) for pos in positions]
    labels = oracle.classify_batch(blocked)

    potential = []
    seen = set()
    for pos, label in zip(positions, labels):
        if label != original_label and pos not in seen:
            seen.add(pos)
            potential.append((pos, label))

    for pos, blocked_label in potential:
        conf = confirm_backdoor(
            oracle, pos, m, n, lambda_t, img, clean_ref, k, rng,
            original_label=original_label, blocked_label=blocked_label,
        )
        if conf.confirmed:
            fixed = place_blocker(img, pos, spec)
            recon = reconstruct_trigger(pos, img, m, n, conf, original_label)
            return DetectionResult(True, fixed, pos, recon, blocked_label,
                                   len(potential), conf.ratio)
    return DetectionResult(False, img, None, None, original_label, len(potential))


STATUS_CLEAN = "clean"
STATUS_BACKDOORED = "backdoored"
STATUS_CLEARED = "suspected-then-cleared"


@dataclass
class Verdict:
    image_id: str
    status: str
    original_label: int
    sanitized_label: int
    position: Position | None = None
    ratio: float | None = None

    def to_dict(self) -> dict:
        return {
            "id": self.image_id,
            "status": self.status,
            "original_label": self.original_label,
            "sanitized_label": self.sanitized_label,
            "position": [self.position.x, self.position.y] if self.position else None,
            "ratio": self.ratio,
        }


@dataclass
class DefenceReport:
    config: DefenceConfig
    verdicts: list = field(default_factory=list)
    reconstruction: ReconstructedTrigger | None = None
    trigger_position: Position | None = None
    aborted: str | None = None

    @property
    def backdoor_ids(self) -> list:
        return [v.image_id for v in self.verdicts if v.status == STATUS_BACKDOORED]

    def summary(self) -> dict:
        counts = {STATUS_CLEAN: 0, STATUS_BACKDOORED: 0, STATUS_CLEARED: 0}
        for v in self.verdicts:
            counts[v.status] += 1
        return {
            "total": len(self.verdicts),
            "clean": counts[STATUS_CLEAN],
            "backdoored": counts[STATUS_BACKDOORED],
            "suspected_then_cleared": counts[STATUS_CLEARED],
        }

    def to_dict(self) -> dict:
        recon = None
        if self.reconstruction is not None:
            recon = {
                "position": [self.reconstruction.position.x, self.reconstruction.position.y],
                "target_label": self.reconstruction.target_label,
                "ratio": self.reconstruction.ratio,
                "patch_shape": list(self.reconstruction.patch.shape),
            }
        return {
            "config": self.config.to_dict(),
            "verdicts": [v.to_dict() for v in self.verdicts],
            "summary": self.summary(),
            "trigger_position": (
                [self.trigger_position.x, self.trigger_position.y]
                if self.trigger_position else None
            ),
            "reconstruction": recon,
            "aborted": self.aborted,
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def defend(oracle: Oracle, stream, config: DefenceConfig,
           clean_ref: CleanReference, image_ids=None) -> DefenceReport:
    """Run the full defence over an image stream.

    While the trigger position is unknown every image undergoes the
    randomized search; once one position is confirmed, later images are
    blocked there directly and re-confirmed on transition (unless
    ``config.fast_confirm`` trusts the first confirmation).  Oracle failures
    raise :class:`StreamAborted` carrying the partial report.
    """
    stream = list(stream)
    if image_ids is None:
        image_ids = [f"img-{i}" for i in range(len(stream))]
    report = DefenceReport(config=config)
    rng = np.random.default_rng(config.search_seed)

    trigger_found = False
    pos: Position | None = None

    for image_id, img in zip(image_ids, stream):
        h, w = img.shape[:2]
        m, n = config.blocker_dims(w, h)
        try:
            original = oracle.classify(img)
            if trigger_found:
                dom = dominant_colour(img, config.kmeans_seed)
                fixed = place_blocker(img, pos, BlockerSpec(m, n, dom))
                blocked_label = oracle.classify(fixed)
                if blocked_label != original:
                    if config.fast_confirm:
                        verdict = Verdict(image_id, STATUS_BACKDOORED, original,
                                          blocked_label, position=pos)
                    else:
                        conf = confirm_backdoor(
                            oracle, pos, m, n, config.lambda_t, img, clean_ref,
                            config.check_size, rng,
                            original_label=original, blocked_label=blocked_label,
                        )
                        if conf.confirmed:
                            verdict = Verdict(image_id, STATUS_BACKDOORED, original,
                                              blocked_label, position=pos,
                                              ratio=conf.ratio)
                        else:
                            verdict = Verdict(image_id, STATUS_CLEARED, original,
                                              original, position=pos,
                                              ratio=conf.ratio)
                else:
                    verdict = Verdict(image_id, STATUS_CLEAN, original, original)
            else:
                det = trigger_detect(
                    oracle, img, m, n, config.lambda_t, config.trials,
                    clean_ref, config.check_size, rng,
                    kmeans_seed=config.kmeans_seed, original_label=original,
                )
                if det.found:
                    trigger_found = True
                    pos = det.position
                    report.trigger_position = det.position
                    report.reconstruction = det.reconstruction
                    verdict = Verdict(image_id, STATUS_BACKDOORED, original,
                                      det.blocked_label, position=det.position,
                                      ratio=det.ratio)
                elif det.transitions:
                    verdict = Verdict(image_id, STATUS_CLEARED, original, original)
                else:
                    verdict = Verdict(image_id, STATUS_CLEAN, original, original)
        except OracleError as exc:
            report.aborted = f"oracle failure at {image_id}: {exc}"
            raise StreamAborted(report.aborted, report) from exc
        report.verdicts.append(verdict)
    return report


def export_reconstruction(recon: ReconstructedTrigger, directory) -> list:
    """Write the reconstructed patch and the poisoned check-set images as
    PNGs; returns the written paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    patch_path = directory / "reconstructed_trigger.png"
    save_png(recon.patch, patch_path)
    paths.append(patch_path)
    for i, img in enumerate(recon.check_images):
        p = directory / f"poisoned_check_{i:03d}.png"
        save_png(img, p)
        paths.append(p)
    return paths
