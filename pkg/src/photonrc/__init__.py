"""Simulator for a 56 GBaud PAM-4 single-sideband direct-detection link with
photonic time-delay-reservoir / extreme-learning-machine post-processing and
a Kramers-Kronig receiver baseline."""

from photonrc.sigproc import ComplexEnvelope, SampledSignal

__all__ = ["ComplexEnvelope", "SampledSignal"]
__version__ = "0.1.0"
