"""Build a simulated backdoored world: a labelled dataset, a planted
trigger, and a classifier that misbehaves exactly when the trigger is
present.

Run: python3 demos/02_simulated_backdoor.py
"""

import numpy as np

from neodefence import SimClassifier, SimOracle, gen_dataset, poison_image
from neodefence.image_ops import Position
from neodefence.simlab import inverted_l_trigger

# 5 classes of 32x32 RGB "glyphs": each image is its class prototype plus noise
images, manifest, prototypes = gen_dataset(num_classes=5, images_per_class=20, seed=3)
labels = [e.label for e in manifest.entries]

# The attacker's trigger: a yellow inverted-L in a 4x4 box near a corner
trigger = inverted_l_trigger(4, (255, 255, 0), Position(26, 26))
target = 0
clf = SimClassifier(prototypes, trigger, target=target)
oracle = SimOracle(clf)

clean_preds = oracle.classify_batch(images)
accuracy = np.mean([p == l for p, l in zip(clean_preds, labels)])
print(f"clean accuracy: {accuracy:.0%}  (the backdoor is invisible on clean data)")

# Stamp the trigger on every image: the prediction collapses to the target
poisoned = [poison_image(img, trigger) for img in images]
hijacked = np.mean([p == target for p in oracle.classify_batch(poisoned)])
print(f"triggered inputs sent to class {target}: {hijacked:.0%}")

# The trigger is tiny -- the attack is localized, which is what the defence exploits
h, w = images[0].shape[:2]
print(f"trigger area: {trigger.area_fraction(w, h):.1%} of the image")
