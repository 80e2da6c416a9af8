"""
The Sobel gradient layer
========================

Gradients of the image and of the predicted confidence map are compared
inside the boundary band.  The layer returns a magnitude and a unit
direction per pixel, and it is differentiable, so it can sit inside the
loss.
"""

import torch

from banet.gradients import gradient_field, image_gradient

# A vertical step edge: the gradient points across it.
x = torch.zeros(8, 8, dtype=torch.float64)
x[:, 4:] = 1.0
f = gradient_field(x)
print("magnitude on row 0:", f.magnitude[0].tolist())
print("direction at the edge:", f.gx[0, 3].item(), f.gy[0, 3].item())

# Flat regions have zero magnitude and a zero direction vector, not NaN.
print("flat pixel direction:", f.gx[0, 0].item(), f.gy[0, 0].item())

# Image gradients are taken on the channel mean after min-max scaling,
# which makes them independent of global brightness and contrast.
img = torch.rand(3, 16, 16, dtype=torch.float64)
a = image_gradient(img).magnitude
b = image_gradient(0.5 * img + 0.1).magnitude
print("brightness invariant:", torch.allclose(a, b))

# Gradients flow back through magnitude and direction.
p = torch.rand(8, 8, dtype=torch.float64, requires_grad=True)
fp = gradient_field(p)
(fp.magnitude.sum() + fp.gx.sum()).backward()
print("grad finite:", bool(torch.isfinite(p.grad).all()))
