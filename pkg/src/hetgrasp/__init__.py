"""Few-shot grasp-quality learning on objects with heterogeneous mass and friction."""

__version__ = "0.1.0"
