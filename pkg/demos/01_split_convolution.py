"""
Splitting a convolution between a small trusted context and a fast untrusted one
================================================================================

An activation with most of its energy in a few channel directions is split
into a rank-r factored part plus a dense residual.  The trusted side only
convolves r basis maps; the untrusted side convolves the residual with the
original kernels.  Adding the two outputs gives back the dense convolution.
"""
import numpy as np

from asymsplit import entropy, tensor
from asymsplit.asymconv import merge_outputs, transform_kernels, trusted_forward, untrusted_forward
from asymsplit.spectral import decompose_activation
from asymsplit.tensor import ConvGeometry

rng = np.random.default_rng(0)

# A 32-channel activation whose channels are mixtures of 4 smooth maps plus a little texture.
basis = rng.standard_normal((4, 16 * 16))
x = (rng.standard_normal((32, 4)) @ basis + 0.05 * rng.standard_normal((32, 256))).reshape(32, 16, 16)

prof = entropy.profile(x)
print(f"channel entropy {prof.entropy:.3f} bits -> {prof.principal_count} principal channels")

g = ConvGeometry(32, 16, 3, 1, 1)
w = rng.standard_normal((16, 32, 3, 3))
dense = tensor.conv2d_forward(x, w, g)

for r in (1, 2, 4, 8):
    f, xu = decompose_activation(x, r)
    y = merge_outputs(trusted_forward(f, transform_kernels(w, f), g), untrusted_forward(xu, w, g))
    err = np.linalg.norm(y - dense) / np.linalg.norm(dense)
    kept = 1 - np.sum(xu**2) / np.sum(x**2)
    print(f"r={r}: trusted part holds {kept:6.2%} of the energy, merged error {err:.1e}")
