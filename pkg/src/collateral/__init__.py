"""Collateral-flow grading from perfusion volumes.

Submodules: ``volume`` (I/O and resampling), ``synthgen`` (seeded phantoms),
``roi_env`` and ``dqn`` (cube-search agent), ``descriptors`` (LBP, HOG),
``nn`` (small network engine), ``dae``, ``classifiers`` and ``pipeline``.
"""
__version__ = "0.1.0"
