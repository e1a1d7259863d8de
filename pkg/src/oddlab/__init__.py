"""Label-noise detection by counterfactual loss thresholding, plus numerical
checks of the implicit-bias results it rests on."""

from oddlab.errors import OddLabError

__version__ = "0.1.0"

__all__ = ["OddLabError", "__version__"]
