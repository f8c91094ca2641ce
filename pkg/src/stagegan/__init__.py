"""Three-stage conditional image generation.

Stage 1 trains a contrastive image encoder on unlabeled data, stage 2 fits a
small attribute classifier on the frozen embeddings, and stage 3 trains a
conditional generator whose adversarial updates are interleaved with separate
classification-loss updates through the frozen encoder + classifier.  The
generator draws per-resolution latent codes through near-orthogonal subspace
layers, giving explorable (layer, dimension) controls served over HTTP.
"""

__version__ = "0.1.0"
