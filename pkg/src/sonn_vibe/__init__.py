"""1D self-organized operational neural network engine for bearing fault
severity classification: generative-neuron layers with exact backprop, a
physics-based synthetic vibration generator, and a training/evaluation
pipeline over raw 2-channel vibration frames.
"""

from . import cli, configfile, metrics, model, nn, signal, synthgen, train

__version__ = "0.1.0"

__all__ = ["cli", "configfile", "metrics", "model", "nn", "signal", "synthgen",
           "train", "__version__"]
