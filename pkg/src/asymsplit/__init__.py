"""Asymmetric low-rank splitting of convolutional networks.

Activations are split into a low-rank part kept in a trusted context and a
dense residual handed to an untrusted one.  Submodules:

``tensor``     dense conv/ReLU/pool/linear kernels with backward passes
``spectral``   channel spectra and the alternating low-rank split
``entropy``    SVD-channel entropy and output-entropy bounds
``asymconv``   the split convolution and its weight gradients
``planner``    rank schedule and cost accounting
``privacy``    mutual-information leakage estimates
``simulator``  two-context execution with traces
"""
from .model import ModelSyntaxError, format_model, init_params, load_model, parse_model
from .planner import cost_model, plan_r_schedule
from .spectral import FactoredActivation, decompose_activation, light_svd, reconstruct

__version__ = "0.1.0"

__all__ = [
    "FactoredActivation",
    "ModelSyntaxError",
    "cost_model",
    "decompose_activation",
    "format_model",
    "init_params",
    "light_svd",
    "load_model",
    "parse_model",
    "plan_r_schedule",
    "reconstruct",
]
