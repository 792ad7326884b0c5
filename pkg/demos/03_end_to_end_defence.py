"""The full defence pipeline: calibrate the confirmation threshold, defend a
poisoned stream, reconstruct the trigger, and score the results.

Run: python3 demos/03_end_to_end_defence.py
"""

import numpy as np

from neodefence import (
    CleanReference,
    DefenceConfig,
    SimClassifier,
    SimOracle,
    attack_success_rate,
    choose_lambda,
    confusion,
    defend,
    gen_dataset,
    mitigation_report,
    poison_dataset,
)
from neodefence.image_ops import Position
from neodefence.metrics import render_tables
from neodefence.simlab import square_trigger

SEED = 7

# --- the attacked world -------------------------------------------------------
images, manifest, prototypes = gen_dataset(5, 40, seed=SEED)
trigger = square_trigger(4, (255, 255, 0), Position(26, 26))
images, manifest = poison_dataset(images, manifest, trigger, target=0,
                                  fraction=0.10, seed=SEED)
oracle = SimOracle(SimClassifier(prototypes, trigger, target=0))
print(f"stream: {len(images)} images, "
      f"{sum(e.poisoned for e in manifest.entries)} poisoned")

# A held-out clean reference set from the same world (split 1 reuses the
# class prototypes but draws fresh noise)
ref_images, ref_manifest, _ = gen_dataset(5, 40, seed=SEED, split=1)
reference = CleanReference.from_images(ref_images,
                                       [e.label for e in ref_manifest.entries])

# --- calibration: how often do random clean patches flip predictions? ---------
cal = choose_lambda(oracle, reference, 4, 4, trials=5, samples_per_trial=200,
                    seed=SEED)
print(f"baseline flip rate R_av = {cal.r_av:.4f}, "
      f"threshold interval {cal.interval}, using lambda = 0.8")

# --- defend the stream -----------------------------------------------------------
config = DefenceConfig(lambda_t=0.8, kmeans_seed=SEED, search_seed=SEED)
report = defend(oracle, images, config, reference,
                image_ids=[e.file for e in manifest.entries])
print(f"verdicts: {report.summary()}")
print(f"confirmed trigger position: "
      f"({report.trigger_position.x}, {report.trigger_position.y}) "
      f"-- planted at (26, 26)")

recon = report.reconstruction
print(f"reconstructed patch: {recon.patch.shape[1]}x{recon.patch.shape[0]}, "
      f"induces class {recon.target_label} "
      f"on {recon.ratio:.0%} of the check set")

# --- score it ----------------------------------------------------------------------
stages = confusion(report.verdicts, manifest)
truth = {e.file: e.label for e in manifest.entries}
rows = mitigation_report(
    [v.original_label for v in report.verdicts],
    [v.sanitized_label for v in report.verdicts],
    [truth[v.image_id] for v in report.verdicts],
)
print()
print(render_tables(stages, rows))

poisoned_only = [img for img, e in zip(images, manifest.entries) if e.poisoned]
before = attack_success_rate(oracle, poisoned_only, target=0)
after = attack_success_rate(oracle, poisoned_only, target=0, defended=True,
                            config=config, clean_ref=reference)
print(f"attack success rate: {before:.0%} undefended -> {after:.0%} defended")
