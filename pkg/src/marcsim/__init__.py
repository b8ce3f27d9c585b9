"""marcsim: DRAM command-stream simulator for tRC-pattern row-hammer detection."""

__version__ = "0.1.0"
