"""Two-stage chain-of-thought training (SFT warm start, then curriculum GRPO)
over a synthetic multiple-choice environment."""

__version__ = "0.1.0"
