import numpy as np
import pytest

from neodefence import simlab
from neodefence.defence import CleanReference
from neodefence.image_ops import Position

TARGET = 0
TRIGGER_POS = Position(26, 26)


@pytest.fixture(scope="session")
def world():
    """A small simulated backdoored world shared across tests."""
    images, manifest, prototypes = simlab.gen_dataset(5, 40, seed=7)
    trigger = simlab.square_trigger(4, (255, 255, 0), TRIGGER_POS)
    classifier = simlab.SimClassifier(prototypes, trigger, target=TARGET)
    ref_images, ref_manifest, _ = simlab.gen_dataset(5, 40, seed=7, split=1)
    reference = CleanReference.from_images(
        ref_images, [e.label for e in ref_manifest.entries]
    )
    return {
        "images": images,
        "labels": [e.label for e in manifest.entries],
        "manifest": manifest,
        "prototypes": prototypes,
        "trigger": trigger,
        "classifier": classifier,
        "oracle": simlab.SimOracle(classifier),
        "reference": reference,
        "target": TARGET,
    }


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
