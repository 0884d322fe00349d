"""Crop type and phenological stage classification from street-level pictures.

Modules: ``geolink`` (picture to parcel linking), ``taxonomy`` (labels and
their generalization), ``sampler`` (balanced datasets), ``embedder``
(feature vectors), ``trainer`` (softmax head), ``sweep`` (hyper-parameter
search), ``evaluation`` (metrics and parcel voting), ``pipeline``/``cli``
(stage commands) and ``synth`` (synthetic surveys).
"""

__version__ = "0.1.0"
