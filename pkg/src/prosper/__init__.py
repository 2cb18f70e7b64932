"""Planning and simulation engine for robot-guided prostate brachytherapy."""

__version__ = "0.1.0"
