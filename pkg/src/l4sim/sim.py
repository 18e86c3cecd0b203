"""Deterministic discrete-event engine.

Wires sender -> queue discipline -> bottleneck link -> receiver -> feedback
link -> controller and advances virtual time in integer microseconds. Events
execute in (due, insertion) order, so identical scenario + seed reproduces a
run bit for bit. All randomness comes from named sub-streams derived from
the scenario seed.
"""

from __future__ import annotations

import hashlib
import heapq
import random
from dataclasses import dataclass, field

from .aqm import DropTail, DropTailConfig, DualPi2, DualPi2Config
from .cc import ControllerKind, GccParams, RateBounds, ScalableParams, make_controller
from .core import Packet, SimTime, us_from_s
from .media import MediaSource, Receiver, SourceConfig
from .netem import CapacityPattern, Constant, ForwardLink, JitterProfile

__all__ = [
    "Scenario",
    "TimelineLog",
    "RunAudit",
    "run_scenario",
    "stream_seed",
]


def stream_seed(seed: int, label: str) -> int:
    """Derive an independent, reproducible sub-stream seed from the scenario
    seed and a purpose label. Python's built-in hash() is salted per process,
    so a stable digest is required."""
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return (seed & 0xFFFFFFFFFFFFFFFF) ^ int.from_bytes(digest[:8], "big")


@dataclass
class Scenario:
    """One simulated session: link, queue discipline, controller, source."""

    seed: int = 1
    duration_s: float = 120.0
    capacity: CapacityPattern = field(default_factory=lambda: Constant(3.0))
    forward_delay_us: SimTime = 6_000
    jitter: JitterProfile | None = None
    reverse_delay_us: SimTime = 6_000
    aqm: DualPi2Config | DropTailConfig = field(default_factory=DualPi2Config)
    controller: ControllerKind = ControllerKind.GCC
    gcc_params: GccParams | None = None
    scalable_params: ScalableParams | None = None
    source: SourceConfig = field(default_factory=SourceConfig)
    feedback_interval_us: SimTime = 100_000
    dejitter_us: SimTime = 15_000

    def validate(self) -> None:
        if self.duration_s <= 0:
            raise ValueError("duration_s must be positive")
        if self.forward_delay_us <= 0 or self.reverse_delay_us <= 0:
            raise ValueError("path delays must be positive")
        if self.feedback_interval_us <= 0:
            raise ValueError("feedback_interval_us must be positive")
        if self.dejitter_us < 0:
            raise ValueError("dejitter_us must be non-negative")
        self.aqm.validate()
        self.source.validate()
        if self.gcc_params is not None:
            self.gcc_params.validate()
        if self.scalable_params is not None:
            self.scalable_params.validate()


@dataclass
class RunAudit:
    """Packet-conservation counters captured at the end of a run."""

    sent: int
    delivered: int
    dropped: int
    in_queue: int
    in_transit: int
    queue_errors: list[str]

    def errors(self) -> list[str]:
        errs = list(self.queue_errors)
        if self.sent != self.delivered + self.dropped + self.in_queue + self.in_transit:
            errs.append(
                f"end-to-end: sent {self.sent} != delivered {self.delivered} + dropped "
                f"{self.dropped} + in-queue {self.in_queue} + in-transit {self.in_transit}"
            )
        return errs


@dataclass
class TimelineLog:
    """Per-run record: optional event rows for plotting plus the aggregate
    samples and counters the metrics layer consumes."""

    duration_us: SimTime
    rtt_samples_us: list[int]
    stalled_us: SimTime
    played_bytes: int
    sent: int
    delivered: int
    drop_count: int
    mark_count: int
    audit: RunAudit
    rows: list[tuple[SimTime, str, int]] | None = None

    def to_csv(self, path: str) -> None:
        if self.rows is None:
            raise ValueError("run was executed without timeline recording")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write("t_us,event,value\n")
            for t, event, value in self.rows:
                fh.write(f"{t},{event},{value}\n")


# Event kinds, dispatched by integer for speed.
_ENCODE = 0
_SEND = 1
_SERVICE_END = 2
_DELIVER = 3
_FB_BUILD = 4
_FB_ARRIVE = 5
_PI2 = 6
_PLAYOUT = 7


class _Engine:
    def __init__(self, scenario: Scenario, timeline: bool) -> None:
        scenario.validate()
        self.sc = scenario
        self.end_us = us_from_s(scenario.duration_s)
        self.rows: list[tuple[SimTime, str, int]] | None = [] if timeline else None

        aqm_rng = random.Random(stream_seed(scenario.seed, "aqm"))
        jitter_rng = random.Random(stream_seed(scenario.seed, "jitter"))

        aqm_observer = self._aqm_event if timeline else None
        if isinstance(scenario.aqm, DualPi2Config):
            self.aqm: DualPi2 | DropTail = DualPi2(scenario.aqm, aqm_rng, aqm_observer)
            self._pi2_period = scenario.aqm.t_update_us
        else:
            self.aqm = DropTail(scenario.aqm, aqm_rng, aqm_observer)
            self._pi2_period = 0

        self.link = ForwardLink(
            scenario.capacity, scenario.forward_delay_us, scenario.jitter, jitter_rng
        )
        self.source = MediaSource(scenario.source)
        playout_observer = self._playout_event if timeline else None
        self.receiver = Receiver(
            scenario.source.fps,
            scenario.reverse_delay_us,
            scenario.dejitter_us,
            playout_observer,
        )
        bounds = RateBounds(
            scenario.source.min_bitrate_bps,
            scenario.source.max_bitrate_bps,
            scenario.source.start_bitrate_bps,
        )
        self.controller = make_controller(
            scenario.controller,
            bounds,
            self.source.size_of,
            scenario.gcc_params,
            scenario.scalable_params,
        )
        self.target_bps = bounds.clamp(scenario.source.start_bitrate_bps)

        self.heap: list[tuple[SimTime, int, int, object]] = []
        self._tie = 0
        self.link_busy = False
        self.sent = 0
        self.delivered = 0
        self.in_transit = 0

    # -- timeline hooks -----------------------------------------------------

    def _aqm_event(self, event: str, packet: Packet, now: SimTime) -> None:
        self.rows.append((now, event, packet.seq))

    def _playout_event(self, event: str, value: int, now: SimTime) -> None:
        self.rows.append((now, event, value))

    # -- event plumbing -----------------------------------------------------

    def _push(self, due: SimTime, kind: int, payload: object = None) -> None:
        self._tie += 1
        heapq.heappush(self.heap, (due, self._tie, kind, payload))

    def _try_service(self, now: SimTime) -> None:
        if self.link_busy:
            return
        packet = self.aqm.dequeue(now)
        if packet is None:
            return
        self.link_busy = True
        ser = self.link.serialization_us(packet.size_bytes, now)
        self._push(now + ser, _SERVICE_END)
        when = self.link.deliver(packet, now)
        self.in_transit += 1
        self._push(when, _DELIVER, packet)

    def _send(self, now: SimTime, packet: Packet) -> None:
        self.sent += 1
        if self.rows is not None:
            self.rows.append((now, "send", packet.seq))
        self.aqm.enqueue(packet, now)
        self._try_service(now)

    # -- event handlers -----------------------------------------------------

    def _on_encode(self, now: SimTime) -> None:
        packets = self.source.encode_tick(self.target_bps, now)
        for packet in packets:
            self._push(packet.sent_at, _SEND, packet)
        next_tick = (self.source.next_frame * 1_000_000) // self.sc.source.fps
        if next_tick <= self.end_us:
            self._push(next_tick, _ENCODE)

    def _on_deliver(self, now: SimTime, packet: Packet) -> None:
        self.in_transit -= 1
        self.delivered += 1
        if self.rows is not None:
            self.rows.append((now, "deliver", packet.seq))
        playout_at = self.receiver.on_packet(packet, now)
        if playout_at is not None:
            self._push(playout_at, _PLAYOUT)

    def _on_fb_build(self, now: SimTime) -> None:
        report = self.receiver.build_feedback(now)
        self._push(now + self.sc.reverse_delay_us, _FB_ARRIVE, report)
        self._push(now + self.sc.feedback_interval_us, _FB_BUILD)

    def _on_fb_arrive(self, now: SimTime, report) -> None:
        new_target = self.controller.update(report, now)
        if new_target != self.target_bps:
            self.target_bps = new_target
            if self.rows is not None:
                self.rows.append((now, "rate", new_target))
        for seq in report.lost_seqs:
            rtx = self.source.make_retransmit(seq, now)
            if rtx is not None:
                self._send(now, rtx)

    def _on_playout(self, now: SimTime) -> None:
        next_at = self.receiver.playout_tick(now)
        if next_at is not None:
            self._push(next_at, _PLAYOUT)

    # -- main loop ----------------------------------------------------------

    def run(self) -> TimelineLog:
        self._push(0, _ENCODE)
        self._push(self.sc.feedback_interval_us, _FB_BUILD)
        if self._pi2_period:
            self._push(self._pi2_period, _PI2)

        heap = self.heap
        end = self.end_us
        pop = heapq.heappop
        while heap:
            due, _tie, kind, payload = pop(heap)
            if due > end:
                break
            if kind == _SEND:
                self._send(due, payload)
            elif kind == _DELIVER:
                self._on_deliver(due, payload)
            elif kind == _SERVICE_END:
                self.link_busy = False
                self._try_service(due)
            elif kind == _ENCODE:
                self._on_encode(due)
            elif kind == _FB_BUILD:
                self._on_fb_build(due)
            elif kind == _FB_ARRIVE:
                self._on_fb_arrive(due, payload)
            elif kind == _PI2:
                self.aqm.pi2_update(due)
                self._push(due + self._pi2_period, _PI2)
            else:  # _PLAYOUT
                self._on_playout(due)

        self.receiver.finalize(end)
        audit = RunAudit(
            sent=self.sent,
            delivered=self.delivered,
            dropped=self.aqm.total_dropped(),
            in_queue=self.aqm.queued_packets(),
            in_transit=self.in_transit,
            queue_errors=self.aqm.conservation_errors(),
        )
        return TimelineLog(
            duration_us=end,
            rtt_samples_us=self.receiver.rtt_samples_us,
            stalled_us=self.receiver.stalled_total_us,
            played_bytes=self.receiver.played_bytes,
            sent=self.sent,
            delivered=self.delivered,
            drop_count=self.aqm.total_dropped(),
            mark_count=self.aqm.total_marked(),
            audit=audit,
            rows=self.rows,
        )


def run_scenario(scenario: Scenario, timeline: bool = False):
    """Execute one scenario. Returns (MetricsReport, TimelineLog).

    Identical scenario + seed gives bit-identical results; invalid
    configuration is rejected before any event executes.
    """
    engine = _Engine(scenario, timeline)
    log = engine.run()
    from .harness import compute_metrics  # deferred: harness builds on this module

    return compute_metrics(log, scenario), log
