"""Training-free sentence embeddings from a decoder's re-routed KV states.

The final token's key/value pair at selected layers is prepended as a
virtual position-0 entry, so earlier tokens can see a summary of the whole
sequence. Layers are picked from the intrinsic-dimension profile of
last-token states.
"""

from .embed import EmbedRequest, Embedding, embed, embed_batch, embed_texts
from .id_select import IDTrajectory, LayerSelection, id_trajectory, select_layers, twonn
from .model import ModelConfig, Weights, forward_standard, load_weights, random_init, save_weights
from .numerics import PREFIX_DISABLED
from .reroute import RerouteConfig, forward_rerouted

__version__ = "0.1.0"

__all__ = [
    "EmbedRequest",
    "Embedding",
    "IDTrajectory",
    "LayerSelection",
    "ModelConfig",
    "PREFIX_DISABLED",
    "RerouteConfig",
    "Weights",
    "embed",
    "embed_batch",
    "embed_texts",
    "forward_rerouted",
    "forward_standard",
    "id_trajectory",
    "load_weights",
    "random_init",
    "save_weights",
    "select_layers",
    "twonn",
]
