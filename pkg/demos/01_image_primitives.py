"""Tour of the pixel-level primitives: blockers, patch transplantation,
dominant colour, and histogram distance.

Run: python3 demos/01_image_primitives.py
"""

import numpy as np

from neodefence import (
    BlockerSpec,
    Position,
    bhattacharyya,
    dominant_colour,
    extract_region,
    histogram,
    paste_region,
    place_blocker,
)

rng = np.random.default_rng(0)

# A 32x32 scene: mostly teal with mild texture, and a triggered copy carrying
# a small bright square in a corner
clean = np.full((32, 32, 3), (20, 120, 120), dtype=np.uint8)
clean += rng.integers(0, 8, size=clean.shape, dtype=np.uint8)
img = clean.copy()
img[26:30, 26:30] = (255, 255, 0)

# The dominant colour is what a trigger blocker gets painted with: the centre
# of the most populated k-means cluster, so the small bright square loses.
dom = dominant_colour(img, seed=0)
print(f"dominant colour: {dom}  (the bright 4x4 square is outvoted)")

# Painting a blocker of that colour over the square erases it
blocked = place_blocker(img, Position(26, 26), BlockerSpec(4, 4, dom))
print(f"bright pixels before: {(img == 255).any(axis=2).sum()}, "
      f"after blocking: {(blocked == 255).any(axis=2).sum()}")

# Patches can be lifted from one image and transplanted onto another; this is
# how a suspected trigger is carried over to clean reference images.
patch = extract_region(img, Position(26, 26), 4, 4)
canvas = np.full((32, 32, 3), (200, 200, 200), dtype=np.uint8)
stamped = paste_region(canvas, patch, Position(26, 26))
print(f"transplanted patch intact: {bool((stamped[26:30, 26:30] == patch.pixels).all())}")

# Histogram distance quantifies how far an edit moved the image. Blocking with
# the dominant colour perturbs the histogram far less than the trigger did.
h_clean = histogram(clean)
d_trigger = bhattacharyya(h_clean, histogram(img))
d_blocked = bhattacharyya(h_clean, histogram(blocked))
print(f"distance(clean, triggered) = {d_trigger:.4f}")
print(f"distance(clean, blocked)   = {d_blocked:.4f}  (closer to clean)")
