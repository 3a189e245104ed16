"""Generation backends: encode/decode/classify.

`SyntheticCodec` is the fully analytic phantom codec used for all primary
verification; `SubprocessCodec` bridges to external codecs over the file
protocol defined in `cfseg.codec.protocol`.
"""

from cfseg.codec.synthetic import (
    CodecContract,
    LesionParams,
    PhantomParams,
    SyntheticCodec,
    SyntheticRegistry,
    make_arc_dataset,
    make_dataset,
)
from cfseg.codec.bridge import BridgeError, SubprocessCodec

__all__ = [
    "BridgeError",
    "CodecContract",
    "LesionParams",
    "PhantomParams",
    "SubprocessCodec",
    "SyntheticCodec",
    "SyntheticRegistry",
    "make_arc_dataset",
    "make_dataset",
]
