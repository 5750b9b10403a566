"""Search for knowledge-transfer models in evolutionary multi-task optimization.

The package couples a per-task genetic algorithm with pluggable knowledge
transfer models, hand-written baselines, a sandbox for executing generated
transfer code, prompt-driven model generation, and a multi-objective
evolutionary loop that searches the space of transfer models on (normalized
fitness, running time).
"""

__version__ = "0.1.0"
