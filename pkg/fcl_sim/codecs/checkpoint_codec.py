import struct

import numpy as np

from fcl_sim.codecs.base_class import BaseCodec, ByteReader
from fcl_sim.exceptions import DataFormatError, ShapeError
from fcl_sim.numeric_core import Layer, ModelParams


class CheckpointCodec(BaseCodec):
    """
    FCL1 checkpoint files.

    Layout after magic and version: u32 layer count, one (u32 out, u32 in) pair per
    layer, u32 encoder/projection/classifier layer counts, then float64 values in
    layer order, weight before bias.
    """

    magic = b"FCL1"
    version = 1

    def _encode(self, params: ModelParams) -> bytes:
        layers = [layer for _, layer in params.named_layers()]
        sections = (
            len(params.encoder_layers),
            len(params.projection_layers),
            int(params.classifier is not None),
        )

        header = struct.pack("<I", len(layers))
        header += b"".join(struct.pack("<2I", *layer.weight.shape) for layer in layers)
        header += struct.pack("<3I", *sections)
        body = b"".join(
            layer.weight.astype("<f8").tobytes() + layer.bias.astype("<f8").tobytes()
            for layer in layers
        )
        return header + body

    def _decode(self, reader: ByteReader) -> ModelParams:
        (count,) = reader.unpack("<I")
        dims = [reader.unpack("<2I") for _ in range(count)]
        n_encoder, n_projection, n_classifier = reader.unpack("<3I")
        if n_encoder + n_projection + n_classifier != count or n_classifier > 1:
            raise DataFormatError(
                f"section counts {(n_encoder, n_projection, n_classifier)} do not add up to {count}",
                path=str(self.path),
            )

        layers = []
        for out_dim, in_dim in dims:
            weight = reader.array("<f8", out_dim * in_dim).reshape(out_dim, in_dim)
            bias = reader.array("<f8", out_dim)
            layers.append(Layer(weight.astype(np.float64), bias.astype(np.float64)))

        try:
            return ModelParams(
                layers[:n_encoder],
                layers[n_encoder : n_encoder + n_projection],
                layers[-1] if n_classifier else None,
            )
        except ShapeError as error:
            raise DataFormatError(str(error), path=str(self.path)) from error


def save_checkpoint(params: ModelParams, path):
    return CheckpointCodec(path).save(params)


def load_checkpoint(path) -> ModelParams:
    return CheckpointCodec(path).load()
