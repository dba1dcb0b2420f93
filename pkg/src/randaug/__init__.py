"""RandAugment engine: transforms, sampler, search harness and density matching."""

__version__ = "0.1.0"
