"""Energy-efficient rate splitting for multicell MIMO STAR-RIS broadcast channels."""
__version__ = "0.1.0"
