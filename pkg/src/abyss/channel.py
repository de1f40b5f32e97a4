"""Simulated acoustic link: packetized, lossy, timed delivery.

Erasure model only: packets are lost whole and retransmitted until delivered,
so content always arrives intact; the channel corrupts timing, never bytes.
Timing model: the first transmission of every packet is streamed back to back
and the trailing propagation delay is paid once, while each retransmission
costs its packet airtime plus a full round trip. With zero loss this reduces
exactly to latency + 8 * gross_bytes / rate.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

from .imaging import EncodedPayload


@dataclass(frozen=True)
class LinkConfig:
    rate: float = 50_000.0  # bits/second; acoustic modems sit around 30k-50k
    latency: float = 0.0  # seconds, one-way
    packet_size: int = 256  # bytes on the wire per packet, incl. overhead
    per_packet_overhead: int = 16  # framing bytes per packet
    packet_loss_prob: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.rate <= 0:
            raise ValueError("rate must be positive")
        if self.packet_size <= self.per_packet_overhead:
            raise ValueError("packet_size must exceed per_packet_overhead")
        if self.per_packet_overhead < 0:
            raise ValueError("per_packet_overhead must be non-negative")
        if not 0.0 <= self.packet_loss_prob < 1.0:
            raise ValueError("packet_loss_prob must be in [0, 1)")


@dataclass(frozen=True)
class TransmissionReport:
    payload_bytes: int
    packets_sent: int  # every send attempt, retransmissions included
    packets_lost_then_retransmitted: int
    total_time: float
    delivered: bool

    def as_record(self) -> str:
        """Single structured text record for CLI output."""
        return (
            f"payload_bytes={self.payload_bytes} "
            f"packets_sent={self.packets_sent} "
            f"packets_lost_then_retransmitted={self.packets_lost_then_retransmitted} "
            f"total_time={self.total_time!r} "
            f"delivered={str(self.delivered).lower()}"
        )


def _payload_bytes(payload: EncodedPayload | bytes) -> bytes:
    return payload.data if isinstance(payload, EncodedPayload) else payload


def transmit(
    payload: EncodedPayload | bytes, link: LinkConfig
) -> tuple[bytes, TransmissionReport]:
    """Deliver the payload over the simulated link.

    Splits into ceil(len / (packet_size - overhead)) packets; each packet is
    lost independently with packet_loss_prob under the seeded PRNG and
    retransmitted until it gets through. The last packet is not padded.
    Returns the reassembled bytes (always identical to the input) and the
    timing report.
    """
    data = _payload_bytes(payload)
    if len(data) == 0:
        raise ValueError("payload is empty")
    chunk = link.packet_size - link.per_packet_overhead
    n_packets = math.ceil(len(data) / chunk)
    gross = len(data) + n_packets * link.per_packet_overhead
    rng = random.Random(link.seed)
    attempts_total = 0
    lost_total = 0
    retx_time = 0.0
    for i in range(n_packets):
        body = min(chunk, len(data) - i * chunk)
        airtime = 8.0 * (body + link.per_packet_overhead) / link.rate
        attempts = 1
        while rng.random() < link.packet_loss_prob:
            attempts += 1
        attempts_total += attempts
        lost_total += attempts - 1
        retx_time += (attempts - 1) * (airtime + 2.0 * link.latency)
    # closed-form first pass keeps the zero-loss case exact
    total_time = link.latency + 8.0 * gross / link.rate + retx_time
    report = TransmissionReport(
        payload_bytes=len(data),
        packets_sent=attempts_total,
        packets_lost_then_retransmitted=lost_total,
        total_time=total_time,
        delivered=True,
    )
    return bytes(data), report


def max_fps(link: LinkConfig, payload_bytes: int) -> float:
    """Best-case frames per second for a payload of the given size.

    rate / (8 * gross bytes per frame incl. packetization overhead); loss is
    ignored, matching the best-case framing of the bandwidth claim.
    """
    if payload_bytes <= 0:
        raise ValueError("payload_bytes must be positive")
    chunk = link.packet_size - link.per_packet_overhead
    n_packets = math.ceil(payload_bytes / chunk)
    gross = payload_bytes + n_packets * link.per_packet_overhead
    return link.rate / (8.0 * gross)
