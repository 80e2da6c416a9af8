"""Two-branch portrait segmentation with boundary attention and a gradient refine loss."""
from .boundary import detect_edges, dilation_kernel_size, make_boundary_target, DilationSpec
from .gradients import GradientField, gradient_field, image_gradient, sobel
from .imaging import load_image, load_mask, minmax_normalize, resize_bilinear
from .losses import LossReport, LossWeights, bce, cos_loss, mag_loss, refine_loss, temperature_sigmoid, total_loss
from .model import BANet, ForwardOutput, ModelConfig, count_parameters

__version__ = "0.1.0"
