"""Beta-conditioned variational information bottleneck training for split inference."""

__version__ = "0.1.0"
