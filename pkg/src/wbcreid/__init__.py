"""Weighted bilinear coding over salient part masks, with triplet training and
CMC/mAP retrieval evaluation, implemented in numpy with hand-derived gradients."""

__version__ = "0.1.0"
