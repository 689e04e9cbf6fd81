"""Desk-scale structured pruning toolkit for gated transformer encoders.

The package is organised around a small float64 autodiff core (`tensor`),
a gated transformer encoder (`encoder`), three pruning strategies
(`grad_prune`, `l0`, `ds`), a synthetic multilingual corpus generator
(`corpus`), training loops (`trainer`), reporting utilities (`analysis`)
and a command line front end (`cli`).
"""

__version__ = "0.1.0"
