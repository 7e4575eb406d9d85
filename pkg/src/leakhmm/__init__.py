"""Damage-state classification of sensor waveforms with Gaussian-mixture HMMs.

Modules: ``features`` (damage indexes), ``gmm`` (mixtures and EM),
``hmm`` (inference and Baum-Welch), ``synth`` (samplers and brute-force
oracles), ``datastore`` (files and splits), ``workflow`` and ``cli``.
"""

__version__ = "0.1.0"
