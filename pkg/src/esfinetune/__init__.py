"""Actor-critic pre-training and evolutionary fine-tuning for swing-up control."""

__version__ = "0.1.0"
