"""Weakly supervised tumor segmentation via counterfactual generation.

The pipeline embeds 8-D class-style latent codes with t-SNE, builds a
Mapper-style topology graph over the embedding, plans class-transfer paths
with Dijkstra, walks those paths through a generative codec to produce
counterfactual images, and segments lesions by differencing the query
against its counterfactual.

Everything is verifiable end to end against an analytic synthetic codec;
external (learned) codecs attach through a file-based subprocess protocol.
"""

__version__ = "0.1.0"
