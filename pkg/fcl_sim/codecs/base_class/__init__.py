from fcl_sim.codecs.base_class.base_codec import BaseCodec, ByteReader
