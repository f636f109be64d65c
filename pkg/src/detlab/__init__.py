"""detlab: a desk-scale two-stage detection laboratory.

Implements and instruments two training mechanisms on synthetic scenes:
head-gradient annealing and parallel classifier heads with distinct
positive/negative sampling ratios on a shared backbone.
"""

__version__ = "0.1.0"
