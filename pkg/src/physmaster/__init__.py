"""Physics-guided flow-matching video generation on a deterministic 2D
free-fall world, with oracle-ranked preference finetuning and a
mask-metric evaluation suite."""

__version__ = "0.1.0"
