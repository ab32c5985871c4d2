"""Sound call-graph construction for an i32 WebAssembly subset."""

__version__ = "0.1.0"
