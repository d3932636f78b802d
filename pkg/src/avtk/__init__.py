"""avtk: desk-scale audio-visual segmentation kernels.

Subpackages: ``autodiff`` (minimal reverse-mode tensors), ``grouping``
(DPC-KNN token grouping), ``ama`` (audio-guided modality alignment),
``uncertainty`` (Dirichlet evidence), ``model`` (end-to-end toy pipeline),
``synthdata`` (scripted benchmark clips), ``metrics`` (J / F-beta / J&F),
``storage`` (AVTK tensor files, PGM, checkpoints) and ``cli``.
"""

from .autodiff import Tensor

__all__ = ["Tensor"]
__version__ = "0.1.0"
