from .discriminator import MultiPeriodDiscriminator
from .modules import sequence_mask
from .networks import (
    ContentEncoder,
    Decoder,
    Generator,
    PosteriorEncoder,
    ResidualCouplingBlock,
    ShapeError,
    SpeakerEncoder,
)

__all__ = [
    "ContentEncoder",
    "Decoder",
    "Generator",
    "MultiPeriodDiscriminator",
    "PosteriorEncoder",
    "ResidualCouplingBlock",
    "ShapeError",
    "SpeakerEncoder",
    "sequence_mask",
]
