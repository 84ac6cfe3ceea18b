"""Time-windowed training with label augmentation from earlier-frame models.

Subpackages cover the full experimental pipeline: tabular preprocessing and
frame slicing (``data``), the two from-scratch learners (``mlp``, ``gbt``),
output averaging (``ensemble``), the teacher-chain orchestrator (``distill``),
PR-curve evaluation (``metrics``), synthetic drift streams (``driftgen``),
content-addressed persistence (``registry``), and the CLI harness
(``harness``/``cli``).
"""

__version__ = "0.1.0"
