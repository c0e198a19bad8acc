"""slpt: self-supervised point-cloud pretraining with differentiable feature splatting."""

__version__ = "0.1.0"
