"""
Boundary targets from a segmentation mask
=========================================

The attention branch is supervised with a band around the portrait
outline.  The band width grows with the share of the image the portrait
covers, so a close-up gets a wider band than a distant figure.
"""

import numpy as np

from banet.boundary import DilationSpec, detect_edges, dilation_kernel_size, make_boundary_target
from banet.synthetic import SyntheticSpec, render

# A synthetic head-and-shoulders mask stands in for an annotation.
img, mask = render(SyntheticSpec(size=128, seed=4), 0)
print("portrait covers %.1f%% of the image" % (100 * mask.mean()))

# Edge pixels are the ones whose 4-neighbourhood touches the other class.
edges = detect_edges(mask)
print("edge pixels:", int(edges.sum()))

# The kernel side follows the portrait fraction at a canonical width of 50.
spec = DilationSpec.from_mask(mask, 50)
k = dilation_kernel_size(spec)
print("kernel size:", k)

band = make_boundary_target(mask)
print("band pixels:", int(band.sum()), " band fraction %.3f" % band.mean())

# A smaller portrait gets a thinner band.
small = np.zeros_like(mask)
small[48:80, 48:80] = 1
print("small portrait kernel:", dilation_kernel_size(DilationSpec.from_mask(small, 50)))

# Print a coarse ASCII view of the band (every 8th pixel).
for row in band[::8, ::4]:
    print("".join("#" if v else "." for v in row))
