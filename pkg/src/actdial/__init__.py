"""Response-act guided dialogue agent: corpus tooling, multi-head language
model, reinforcement-learning fine-tuning, evaluation, and serving."""

__version__ = "0.1.0"
