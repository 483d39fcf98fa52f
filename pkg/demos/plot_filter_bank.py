"""
The grey-level filter bank
==========================

Every pixel is described by 28 grey-level numbers computed from whole-image
filters. This script runs them on a small synthetic angiogram and prints how
each plane separates vessel from background pixels.
"""

import numpy as np

from vesselgrow import synthetic
from vesselgrow.featureset import GREY_NAMES, extract_stack

img, truth = synthetic.synthetic_angiogram(size=128, seed=3)
print(f"image {img.shape}, {truth.mean():.1%} vessel pixels")

###############################################################################
# One call computes all 28 planes. Hessian planes come first, then window
# statistics, diffusion, morphology, Kuwahara and the light Sobel flags.

stack = extract_stack(img, "demo")
print(stack.planes.shape)

###############################################################################
# A crude separability score per plane: the difference of class means in
# units of the pooled standard deviation. Vessels are dark, so smoothing
# planes score negative and vesselness-like Hessian planes score positive.

for name in GREY_NAMES:
    plane = stack.plane(name)
    v, b = plane[truth], plane[~truth]
    spread = np.sqrt(0.5 * (v.var() + b.var())) or 1.0
    print(f"{name:<12} {(v.mean() - b.mean()) / spread:+7.2f}")
