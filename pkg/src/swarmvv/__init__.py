"""Corroborative verification toolkit for a foraging robot swarm.

Simulates the cloakroom scenario, turns traces into discretized series,
builds labelled CTMCs from them and model-checks CSL/CTL properties.
"""

__version__ = "0.1.0"
