"""entdist: control plane and discrete-event simulator for metro-scale
entanglement distribution over switched fiber."""

__version__ = "0.1.0"
