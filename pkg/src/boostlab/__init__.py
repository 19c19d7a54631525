"""Bilevel trajectory reweighting of mixed real and synthetic offline data.

A desk-scale lab: two symbolic multi-turn environments, an offline data
pipeline, MC/ILQL value learning on a small recurrent backbone, the
four-phase bilevel trainer, online evaluation and PAC-Bayes diagnostics.
"""

__version__ = "0.1.0"
