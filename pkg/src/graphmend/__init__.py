"""Offline completion of chunk-derived knowledge-graph indexes.

A relational GNN, trained on self-corrupted views of the graph, scores sampled
regions for missing structure; the most suspicious regions are completed by a
citation-checked backend and the results merged back into the index.
"""

__version__ = "0.1.0"
