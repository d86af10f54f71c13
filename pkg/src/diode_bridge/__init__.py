"""Mirror an in-memory message broker across a one-way UDP link."""

from .bridge import BlackBridge, BridgeConfig, RedBridge, black_pipeline, red_pipeline
from .broker import Broker, MirrorPoller, topic_matches
from .envelope import (ExchangeKind, ExchangeMessage, ExchangeSpec, Message,
                       MessageProperties, deserialize_exchange_message,
                       serialize_exchange_message)
from .segmentation import CutterConfig, cut, decode_packet, encode_packet

__all__ = [
    "BlackBridge", "BridgeConfig", "RedBridge", "black_pipeline", "red_pipeline",
    "Broker", "MirrorPoller", "topic_matches",
    "ExchangeKind", "ExchangeMessage", "ExchangeSpec", "Message", "MessageProperties",
    "deserialize_exchange_message", "serialize_exchange_message",
    "CutterConfig", "cut", "decode_packet", "encode_packet",
]
