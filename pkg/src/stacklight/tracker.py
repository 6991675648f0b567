"""Per-machine operating-state tracking: light combinations map to machine
states, a detection pass re-validates the static machine boxes on a fixed
wall-clock interval, and a ledger accumulates time in each state with a
transition log and error alarms.

Durations are accumulated as exact rationals of the float timestamps, so the
per-machine state durations always sum to the elapsed monitored time without
any floating-point drift; reports convert to float seconds at the end.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction

from .imaging import BoundingBox, iou
from .labels import LightCombination, lit_colors


class MachineState(Enum):
    RUNNING = "Running"
    IDLE = "Idle"
    ERROR = "Error"
    OFF = "Off"
    OCCLUDED = "Occluded"


STATE_ORDER = (
    MachineState.RUNNING,
    MachineState.IDLE,
    MachineState.ERROR,
    MachineState.OFF,
    MachineState.OCCLUDED,
)


def map_state(combination: LightCombination) -> MachineState:
    """Combination -> machine state with priority Red > Yellow > Green.

    Any combination containing red signals an error regardless of what else
    is lit; yellow dominates green; GreenWhite counts as running (white is an
    auxiliary indicator on the bicolor model). Other means the crop does not
    look like a tower, i.e. the machine is occluded.
    """
    if combination is LightCombination.OTHER:
        return MachineState.OCCLUDED
    colors = lit_colors(combination)
    if "red" in colors:
        return MachineState.ERROR
    if "yellow" in colors:
        return MachineState.IDLE
    if "green" in colors:
        return MachineState.RUNNING
    return MachineState.OFF


@dataclass(frozen=True)
class TrackerConfig:
    detection_interval_s: float = 0.2
    fps: float = 22.0
    smoothing_window: int = 5
    occlusion_iou: float = 0.5

    def __post_init__(self):
        if not self.detection_interval_s > 0:
            raise ValueError("detection interval must be > 0")
        if not self.fps > 0:
            raise ValueError("fps must be > 0")
        if self.smoothing_window < 1:
            raise ValueError("smoothing window must be >= 1")
        if not 0.0 < self.occlusion_iou <= 1.0:
            raise ValueError("occlusion IoU must be in (0, 1]")


@dataclass(frozen=True)
class TransitionEvent:
    timestamp: float
    machine: str
    from_state: MachineState
    to_state: MachineState


@dataclass(frozen=True)
class AlarmEvent:
    timestamp: float
    machine: str


@dataclass
class StateLedger:
    """Accumulated durations, transition log and alarm log per machine."""

    durations: dict[str, dict[MachineState, Fraction]] = field(default_factory=dict)
    transitions: list[TransitionEvent] = field(default_factory=list)
    alarms: list[AlarmEvent] = field(default_factory=list)

    def add_machine(self, machine: str) -> None:
        self.durations.setdefault(
            machine, {state: Fraction(0) for state in STATE_ORDER}
        )

    def accrue(self, machine: str, state: MachineState, dt: Fraction) -> None:
        self.durations[machine][state] += dt

    def seconds(self, machine: str, state: MachineState) -> float:
        return float(self.durations[machine][state])

    def total_seconds(self, machine: str) -> float:
        return float(sum(self.durations[machine].values(), Fraction(0)))

    def total_exact(self, machine: str) -> Fraction:
        return sum(self.durations[machine].values(), Fraction(0))


class MachineTracker:
    """Single-writer state machine fed with per-frame smoothed labels.

    Machines are registered once with their static boxes (the camera and the
    machines are fixed); detection passes only re-validate those boxes. Call
    `detection_due(t)` to ask whether a pass should run at timestamp t, and
    pass the resulting detections into `step` — a step that carries
    detections counts as a detection pass.
    """

    def __init__(self, config: TrackerConfig = TrackerConfig()):
        self.config = config
        self.ledger = StateLedger()
        self.boxes: dict[str, BoundingBox] = {}
        self.states: dict[str, MachineState] = {}
        self._last_t: float | None = None
        self._first_t: float | None = None
        self._last_pass_t: float | None = None

    def register(self, machines: dict[str, BoundingBox]) -> None:
        for machine, box in machines.items():
            self.boxes[machine] = box
            self.ledger.add_machine(machine)

    def detection_due(self, timestamp: float) -> bool:
        """True when at least detection_interval_s elapsed since the last pass.

        Computed from timestamps, never frame counts, so the schedule cannot
        drift: at 22 fps with a 0.2 s interval a pass lands on every 5th frame.
        """
        if self._last_pass_t is None:
            return True
        return timestamp - self._last_pass_t >= self.config.detection_interval_s - 1e-9

    @property
    def elapsed_exact(self) -> Fraction:
        if self._first_t is None or self._last_t is None:
            return Fraction(0)
        return Fraction(self._last_t) - Fraction(self._first_t)

    def step(
        self,
        frame_index: int,
        timestamp: float,
        labels: dict[str, LightCombination],
        detections=None,
    ) -> list:
        """Advance the session by one frame.

        `labels` carries the per-machine smoothed combination; `detections`
        is the frame's detection list when a pass ran (None otherwise). Time
        since the previous step accrues to the states held during that
        interval. Returns the events (transitions, alarms) emitted this step.
        """
        if self._last_t is not None and timestamp <= self._last_t:
            raise ValueError(
                f"timestamps must be strictly increasing: {timestamp} after {self._last_t}"
            )
        if self._first_t is None:
            self._first_t = timestamp
        if self._last_t is not None:
            dt = Fraction(timestamp) - Fraction(self._last_t)
            for machine, state in self.states.items():
                self.ledger.accrue(machine, state, dt)
        self._last_t = timestamp

        new_states = dict(self.states)
        for machine in self.boxes:
            if machine in labels:
                new_states[machine] = map_state(labels[machine])
            elif machine not in new_states:
                new_states[machine] = MachineState.OFF
        if detections is not None:
            self._last_pass_t = timestamp
            for machine, box in self.boxes.items():
                best = max((iou(box, d.box) for d in detections), default=0.0)
                if best < self.config.occlusion_iou:
                    new_states[machine] = MachineState.OCCLUDED

        events: list = []
        for machine, state in new_states.items():
            old = self.states.get(machine)
            if old is not None and old is not state:
                ev = TransitionEvent(timestamp, machine, old, state)
                self.ledger.transitions.append(ev)
                events.append(ev)
                if state is MachineState.ERROR:
                    alarm = AlarmEvent(timestamp, machine)
                    self.ledger.alarms.append(alarm)
                    events.append(alarm)
            elif old is None and state is MachineState.ERROR:
                alarm = AlarmEvent(timestamp, machine)
                self.ledger.alarms.append(alarm)
                events.append(alarm)
        self.states = new_states
        return events

    def report(self) -> "SessionReport":
        machines = {}
        for machine in sorted(self.boxes):
            durations = {
                state.value: float(self.ledger.durations[machine][state])
                for state in STATE_ORDER
            }
            total = self.ledger.total_exact(machine)
            occluded = self.ledger.durations[machine][MachineState.OCCLUDED]
            known = total - occluded
            if known > 0:
                utilization = float(
                    self.ledger.durations[machine][MachineState.RUNNING] / known
                )
            else:
                utilization = 0.0
            transitions = sum(
                1 for t in self.ledger.transitions if t.machine == machine
            )
            alarms = sum(1 for a in self.ledger.alarms if a.machine == machine)
            machines[machine] = {
                "durations": durations,
                "utilization": utilization,
                "transitions": transitions,
                "alarms": alarms,
            }
        return SessionReport(
            machines=machines, elapsed_seconds=float(self.elapsed_exact)
        )


@dataclass(frozen=True)
class SessionReport:
    machines: dict[str, dict]
    elapsed_seconds: float

    def to_json_obj(self) -> dict:
        return {"elapsed_seconds": self.elapsed_seconds, "machines": self.machines}

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["machine", "state", "seconds"])
        for machine in sorted(self.machines):
            for state in STATE_ORDER:
                writer.writerow(
                    [machine, state.value, repr(self.machines[machine]["durations"][state.value])]
                )
        return buf.getvalue()


def events_to_jsonl(ledger: StateLedger) -> str:
    """Time-ordered transition/alarm stream for downstream consumers."""
    rows = []
    for t in ledger.transitions:
        rows.append(
            (
                t.timestamp,
                0,
                {
                    "type": "transition",
                    "t": t.timestamp,
                    "machine": t.machine,
                    "from": t.from_state.value,
                    "to": t.to_state.value,
                },
            )
        )
    for a in ledger.alarms:
        rows.append(
            (a.timestamp, 1, {"type": "alarm", "t": a.timestamp, "machine": a.machine})
        )
    rows.sort(key=lambda r: (r[0], r[1], r[2]["machine"]))
    return "".join(
        json.dumps(r[2], sort_keys=True, separators=(",", ":")) + "\n" for r in rows
    )
