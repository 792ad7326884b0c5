"""Defending a classifier that lives in another process.

The defence only needs blackbox query access, so any model reachable over
the neo-oracle/1 line protocol can be defended.  This demo saves a
simulated model to disk, serves it through the `neo-oracle-adapter`
subprocess, verifies protocol conformance, and runs the defence against it.

Run (requires the adapter package: pip install -e adapter/):
    python3 demos/04_external_oracle.py
"""

import shutil
import sys
import tempfile
from pathlib import Path

from neodefence import CleanReference, DefenceConfig, defend, gen_dataset
from neodefence.image_ops import Position
from neodefence.oracle import SubprocessOracle, run_conformance_suite
from neodefence.simlab import (
    SimClassifier,
    poison_dataset,
    save_classifier,
    square_trigger,
)

if shutil.which("neo-oracle-adapter") is None:
    print("neo-oracle-adapter is not installed; run: pip install -e adapter/")
    sys.exit(0)

SEED = 7
workdir = Path(tempfile.mkdtemp(prefix="neo-demo-"))

# Save a backdoored model to disk in the documented schema
images, manifest, prototypes = gen_dataset(5, 10, seed=SEED)
trigger = square_trigger(4, (255, 255, 0), Position(26, 26))
classifier = SimClassifier(prototypes, trigger, target=0)
save_classifier(classifier, workdir)
images, manifest = poison_dataset(images, manifest, trigger, target=0,
                                  fraction=0.10, seed=SEED)

command = ["neo-oracle-adapter", "--model", str(workdir), "--classes", "5"]

# Any oracle command can be vetted against the protocol contract first
failures = run_conformance_suite(command, num_classes=5, fuzz_lines=200,
                                 dims=(32, 32))
print(f"conformance: {'PASS' if not failures else failures}")

# The defence is oblivious to where the oracle lives
ref_images, ref_manifest, _ = gen_dataset(5, 20, seed=SEED, split=1)
reference = CleanReference.from_images(ref_images,
                                       [e.label for e in ref_manifest.entries])
with SubprocessOracle(command) as oracle:
    config = DefenceConfig(lambda_t=0.8, kmeans_seed=SEED, search_seed=SEED)
    report = defend(oracle, images, config, reference)
print(f"verdicts over the subprocess oracle: {report.summary()}")
shutil.rmtree(workdir)
