"""iontrap-bench: pulse-level simulator and characterization bench for a
linear-trap Ca-40 optical-qubit machine."""

__version__ = "0.1.0"
