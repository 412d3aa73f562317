"""Online semi-supervised continual learning at desk scale.

Library pieces: a tape-based autodiff core (`autodiff`), small encoders and
projection heads (`models`), the unified semi-supervised contrastive loss
(`losses`), a reservoir-sampled labeled memory with oracle accounting
(`memory`), task streams and augmentation (`stream`), nearest-class-mean
evaluation (`evaluation`), the training strategies (`trainers`) and the
experiment runner (`cli`).
"""

__version__ = "0.1.0"
