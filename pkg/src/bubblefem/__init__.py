"""Face-bubble stabilized mixed finite elements for Biot consolidation and Stokes flow."""

__version__ = "0.1.0"
