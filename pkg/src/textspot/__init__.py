"""Multi-task text localization and lexicon-free recognition, desk scale.

A shallow densely connected backbone feeds a two-level feature pyramid; a
region proposal network plus text/background and box-refinement heads do the
localization, and a convolutional recognition head with a learned attention
vector reads each region through a dynamic aspect-preserving pooling stage
trained with CTC. Everything trains end to end on synthetic documents from
the bundled generator.
"""

__version__ = "0.1.0"
