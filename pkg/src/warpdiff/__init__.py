"""warpdiff: semantic-conditioned multi-view diffusion at desk scale.

Synthetic scenes with exact geometry stand in for real data, and analytic
oracles stand in for pretrained backbones, so every stage of the pipeline
(EDM sampling, feature warping, mask fusion, training, metrics) is testable
end to end on a laptop.
"""

__version__ = "0.1.0"
