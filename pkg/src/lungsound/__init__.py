"""Adventitious lung sound classification from spectrogram images.

Submodules: ``dataset`` (manifests, splits), ``dsp`` (STFT/Mel features),
``nn`` (autodiff tensors, layers, Adam), ``models`` (LightCNN, ResNet18,
checkpoints), ``training`` and ``metrics`` (challenge scores), plus the
``lungsound`` command line in ``cli``.
"""

from .errors import (AudioError, CheckpointError, DataError, ManifestError, NumericalError,
                     UndefinedMetricError)

__version__ = "0.1.0"

__all__ = ["AudioError", "CheckpointError", "DataError", "ManifestError", "NumericalError",
           "UndefinedMetricError", "__version__"]
