"""capskin: a toolkit for capacitive tactile skins.

Simulates multi-taxel skins with ground-truth physics, speaks the bit-exact
frame codec and recording format of their readout streams, fits force and
pressure calibration curves, remaps outputs across sensor instances,
computes the standard characterization metrics, evaluates grasp-shaping
rewards, and serves all of it over a small streaming HTTP service.
"""

__version__ = "0.1.0"
