"""netvec: packets to per-user hostname sequences, online embeddings and profiles."""

__version__ = "0.1.0"
