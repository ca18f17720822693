"""Cross-domain recommendation with a knowledge-graph bridge and
bottleneck-style compression of source-domain behavior.

The package is organized by pipeline stage:

- :mod:`crossrec.graph` - block adjacency assembly and normalization
- :mod:`crossrec.encoder` - weight-free light graph convolution
- :mod:`crossrec.compression` - gated noise mixing and its two losses
- :mod:`crossrec.transfer` - dual-domain predictors and the total objective
- :mod:`crossrec.training` - exact-gradient training loop (Adagrad)
- :mod:`crossrec.evaluation` - leave-one-out ranking metrics, noise injection
- :mod:`crossrec.experiments` - ablation variants and robustness studies
- :mod:`crossrec.data` - dataset files, ID maps, synthetic generation
- :mod:`crossrec.cli` - the ``crossrec`` command
"""

from .data import DatasetBundle, SynthSpec, generate_synthetic, load_bundle
from .evaluation import split_leave_one_out
from .training import TrainConfig, fit

__all__ = [
    "DatasetBundle",
    "SynthSpec",
    "TrainConfig",
    "fit",
    "generate_synthetic",
    "load_bundle",
    "split_leave_one_out",
]

__version__ = "0.1.0"
