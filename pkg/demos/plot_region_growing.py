"""
Growing a vessel through connectivity
=====================================

Segmentation classifies pixels in a growth order. Confident pixels seed the
vessel map; their neighbours are then classified with two extra features
saying whether a vessel pixel is already adjacent (8-neighbourhood) or close
(disc of radius 7). A thin curve that looks like background on its own is
picked up because it touches a vessel that is already known.
"""

import numpy as np

from vesselgrow.element import FALLBACK, GROWN, SEEDED, ElementParams, segment_detailed
from vesselgrow.synthetic import curve_scene, tiered_model

img, blob, curve, distractor = curve_scene()

###############################################################################
# A hand-written one-tree model: dark 7x7 neighbourhoods are vessel with
# probability 0.95; a dark pixel touching a vessel gets 0.6; everything else
# gets 0.1.

model = tiered_model()
res = segment_detailed(img, model)


def show(mask):
    for row in mask:
        print("".join("#" if v else "." for v in row))


show(res.mask)
print(f"seeded {np.sum(res.decided_by == SEEDED)}, grown {np.sum(res.decided_by == GROWN)}, "
      f"fallback {np.sum(res.decided_by == FALLBACK)}, calls {res.classifier_calls}")

###############################################################################
# Without connectivity the same model only keeps the blob core.

flat = segment_detailed(img, model, ElementParams(connectivity=False))
print(f"with connectivity {res.mask.sum()} pixels, without {flat.mask.sum()}")
print("curve recovered:", bool(res.mask[curve].all()), "| distractor kept:",
      bool(res.mask[distractor].any()))
