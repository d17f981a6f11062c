"""Polar code construction toolkit: encode/decode simulation, classical
reliability constructions, and a learned nested-sequence policy."""

from .channel import AWGN, RAYLEIGH, ChannelModel, ebno_db_to_sigma2, frame_rng
from .decode import DecoderConfig, ca_scl_decode, sc_decode, scl_decode
from .polar import CRC4_0X3, CRC_NONE, CodeConfig, CrcConfig, config_from_info_set, \
    encode, info_set_from_sequence, polar_transform
from .construct import dega_sequence, mc_sequence, nr_sequence
from .rewards import BlerEstimate, RewardCache, RewardEnv, StopRule, estimate_bler
from .sequences import ReliabilitySequence, load_sequence

__version__ = "0.1.0"

__all__ = [
    "AWGN", "RAYLEIGH", "ChannelModel", "ebno_db_to_sigma2", "frame_rng",
    "DecoderConfig", "sc_decode", "scl_decode", "ca_scl_decode",
    "CRC_NONE", "CRC4_0X3", "CodeConfig", "CrcConfig", "config_from_info_set",
    "encode", "info_set_from_sequence", "polar_transform",
    "dega_sequence", "mc_sequence", "nr_sequence",
    "BlerEstimate", "RewardCache", "RewardEnv", "StopRule", "estimate_bler",
    "ReliabilitySequence", "load_sequence",
    "__version__",
]
