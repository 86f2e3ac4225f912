import struct

import numpy as np

from fcl_sim.codecs.base_class import BaseCodec, ByteReader
from fcl_sim.data import Dataset
from fcl_sim.exceptions import DataFormatError, ValidationError

MAX_CLASSES = np.iinfo(np.uint16).max + 1


class DatasetCodec(BaseCodec):
    """
    FDS1 dataset files.

    Layout after magic and version: u32 N, u32 H, u32 W, u32 C, u32 n_classes,
    N*H*W*C float32 sample values, N uint16 labels. A flat dataset of width D is
    stored with dims (D, 0, 0).
    """

    magic = b"FDS1"
    version = 1

    def _encode(self, dataset: Dataset) -> bytes:
        if dataset.n_classes > MAX_CLASSES:
            raise ValidationError(f"FDS1 stores at most {MAX_CLASSES} classes")

        shape = dataset.sample_shape
        dims = shape if len(shape) == 3 else (shape[0], 0, 0)
        header = struct.pack("<5I", len(dataset), *dims, dataset.n_classes)
        return (
            header
            + dataset.samples.astype("<f4").tobytes()
            + dataset.labels.astype("<u2").tobytes()
        )

    def _decode(self, reader: ByteReader) -> Dataset:
        n, height, width, channels, n_classes = reader.unpack("<5I")
        flat = width == 0 and channels == 0
        shape = (height,) if flat else (height, width, channels)

        samples = reader.array("<f4", n * int(np.prod(shape))).reshape((n,) + shape)
        labels = reader.array("<u2", n)
        try:
            return Dataset(samples.astype(np.float32), labels.astype(np.int64), n_classes)
        except ValidationError as error:
            raise DataFormatError(str(error), path=str(self.path)) from error


def save_dataset(dataset: Dataset, path):
    return DatasetCodec(path).save(dataset)


def load_dataset(path) -> Dataset:
    return DatasetCodec(path).load()
