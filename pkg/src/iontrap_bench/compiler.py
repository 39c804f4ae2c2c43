"""Circuit IR, machine description, and the circuit-to-pulse compiler.

The compiler translates gate-level instructions into a timed,
channel-resolved schedule.  Scheduling is strictly sequential; per-qubit
phase frames implement virtual Z rotations; branches reserve a time slot
for their conditional continuation.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field, replace

from .errors import GridViolation, UnknownLabel, UnsupportedTarget

GLOBAL_CHANNEL = "g"


def addressed_channel(q: int) -> str:
    return f"a{q}"


# ---------------------------------------------------------------------------
# Circuit IR
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PrepareAll:
    pass


@dataclass(frozen=True)
class R:
    theta: float
    phi: float
    targets: tuple  # tuple of ints, or "all"


@dataclass(frozen=True)
class RZ:
    theta: float
    targets: tuple


@dataclass(frozen=True)
class MS:
    chi: float
    targets: tuple
    bus: str = "axial"  # axial | radial


@dataclass(frozen=True)
class Delay:
    duration_us: float


@dataclass(frozen=True)
class MeasureAll:
    label: str


@dataclass(frozen=True)
class Branch:
    label: str  # label of an earlier MeasureAll
    predicate: tuple  # ((qubit, "bright"|"dark"), ...) conjunction
    body: tuple  # sub-circuit instructions


@dataclass(frozen=True)
class CircuitIR:
    instructions: tuple

    def validate(self, n_qubits: int, max_branch_depth: int = 1, _depth: int = 0):
        seen_labels = set()
        for ins in self.instructions:
            if isinstance(ins, (R, RZ, MS)):
                if ins.targets != "all":
                    for t in ins.targets:
                        if not (0 <= t < n_qubits):
                            raise UnsupportedTarget(f"target {t} out of range")
                if isinstance(ins, MS):
                    tg = range(n_qubits) if ins.targets == "all" else ins.targets
                    tg = tuple(tg)
                    if len(set(tg)) != len(tg) or len(tg) < 2:
                        raise ValueError("MS needs >= 2 distinct targets")
                    if ins.bus not in ("axial", "radial"):
                        raise ValueError("MS bus must be axial or radial")
            elif isinstance(ins, MeasureAll):
                seen_labels.add(ins.label)
            elif isinstance(ins, Branch):
                if ins.label not in seen_labels:
                    raise UnknownLabel(f"branch references unknown label {ins.label!r}")
                if _depth + 1 > max_branch_depth:
                    raise ValueError("branch nesting exceeds configured cap")
                CircuitIR(ins.body).validate(n_qubits, max_branch_depth, _depth + 1)
        return self


# ---------------------------------------------------------------------------
# Machine configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MachineConfig:
    n_qubits: int = 2
    t_half_pi_us: float = 15.0
    t_ms_us: float = 200.0
    timing_grid_ns: int = 10
    branch_latency_us: float = 5.0
    t_measure_us: float = 300.0
    omega_eg: float = 2 * math.pi * 411.0421e12  # bookkeeping only (729 nm)
    rz_mode: str = "virtual"  # virtual | ac_stark

    def __post_init__(self):
        for v in (self.t_half_pi_us, self.t_ms_us, self.branch_latency_us, self.t_measure_us):
            if v <= 0:
                raise ValueError("durations must be positive")
        if self.timing_grid_ns <= 0:
            raise ValueError("timing grid must be positive")
        if self.rz_mode not in ("virtual", "ac_stark"):
            raise ValueError("rz_mode must be 'virtual' or 'ac_stark'")
        for us in (self.t_half_pi_us, self.t_ms_us, self.branch_latency_us, self.t_measure_us):
            ns = us * 1000.0
            if abs(ns / self.timing_grid_ns - round(ns / self.timing_grid_ns)) > 1e-9:
                raise GridViolation(f"duration {us} us not representable on {self.timing_grid_ns} ns grid")

    @property
    def channels(self) -> tuple:
        return (GLOBAL_CHANNEL,) + tuple(addressed_channel(q) for q in range(self.n_qubits))

    def grid_ns(self, value_ns: float) -> int:
        """Round a duration to the timing grid."""
        return int(round(value_ns / self.timing_grid_ns)) * self.timing_grid_ns


# ---------------------------------------------------------------------------
# Pulse schedule
# ---------------------------------------------------------------------------

KINDS = ("carrier", "bichromatic", "ac_stark", "frame_advance", "measure", "branch_point")


@dataclass(frozen=True)
class Event:
    channel: str
    start: int  # ns
    duration: int  # ns
    kind: str
    amplitude: float = 0.0  # dimensionless Rabi scale
    phase: float = 0.0  # rad
    tones: tuple = ()  # frequency offsets, rad/s; (+1.0, -1.0) = symbolic sidebands
    targets: tuple = ()
    angle: float = 0.0  # exact rotation/gate angle carried for the dynamics engine
    bus: str = ""
    label: str = ""
    predicate: tuple = ()
    body: tuple = ()  # compiled continuation events (start-relative), branch_point only

    @property
    def end(self) -> int:
        return self.start + self.duration

    def to_dict(self) -> dict:
        d = {
            "channel": self.channel,
            "start": self.start,
            "duration": self.duration,
            "kind": self.kind,
            "amplitude": self.amplitude,
            "phase": self.phase,
            "tones": list(self.tones),
        }
        if self.targets:
            d["targets"] = list(self.targets)
        if self.kind in ("carrier", "bichromatic", "ac_stark", "frame_advance"):
            d["angle"] = self.angle
        if self.bus:
            d["bus"] = self.bus
        if self.label:
            d["label"] = self.label
        if self.predicate:
            d["predicate"] = [[q, s] for q, s in self.predicate]
        if self.kind == "branch_point":
            d["body"] = [e.to_dict() for e in self.body]
        return d


@dataclass(frozen=True)
class PulseSchedule:
    events: tuple
    frames: tuple  # per-qubit accumulated virtual phase at end of schedule
    grid_ns: int
    n_qubits: int

    @property
    def duration_ns(self) -> int:
        return max((e.end for e in self.events), default=0)

    def to_json(self) -> str:
        return json.dumps(
            {
                "events": [e.to_dict() for e in self.events],
                "frames": list(self.frames),
                "grid_ns": self.grid_ns,
                "n_qubits": self.n_qubits,
            },
            indent=1,
            sort_keys=True,
        )


# ---------------------------------------------------------------------------
# Compilation
# ---------------------------------------------------------------------------

def _expand_targets(targets, n):
    if targets == "all":
        return tuple(range(n))
    return tuple(targets)


def _rotation_event(machine, channel, start_ns, theta, phase, targets, kind="carrier"):
    """Carrier/ac_stark pulse.  Duration is grid-rounded; the amplitude is
    adjusted so duration * amplitude encodes the exact angle."""
    nominal_ns = abs(theta) / (math.pi / 2) * machine.t_half_pi_us * 1000.0
    dur = machine.grid_ns(nominal_ns)
    if dur == 0:
        dur = machine.timing_grid_ns
    amp = nominal_ns / dur
    return Event(
        channel=channel, start=start_ns, duration=dur, kind=kind,
        amplitude=amp, phase=phase, targets=targets, angle=theta,
    )


class _Compiler:
    def __init__(self, machine: MachineConfig):
        self.m = machine
        self.frames = [0.0] * machine.n_qubits
        self.cursor = 0
        self.events = []
        self.measure_ends = {}

    def emit(self, ev: Event):
        self.events.append(ev)
        self.cursor = max(self.cursor, ev.end)

    def compile_instruction(self, ins):
        m = self.m
        if isinstance(ins, PrepareAll):
            return  # state preparation is implicit at schedule start
        if isinstance(ins, R):
            targets = _expand_targets(ins.targets, m.n_qubits)
            if ins.theta == 0.0:
                return
            if len(targets) == m.n_qubits:
                # All frames must agree for a single global pulse.
                f0 = self.frames[0]
                if all(abs(f - f0) < 1e-15 for f in self.frames):
                    self.emit(_rotation_event(m, GLOBAL_CHANNEL, self.cursor,
                                              ins.theta, ins.phi - f0, targets))
                    return
            for q in targets:
                self.emit(_rotation_event(m, addressed_channel(q), self.cursor,
                                          ins.theta, ins.phi - self.frames[q], (q,)))
            return
        if isinstance(ins, RZ):
            targets = _expand_targets(ins.targets, m.n_qubits)
            if m.rz_mode == "virtual":
                for q in targets:
                    self.frames[q] += ins.theta
                    self.events.append(Event(
                        channel=addressed_channel(q), start=self.cursor, duration=0,
                        kind="frame_advance", targets=(q,), angle=ins.theta,
                    ))
                return
            for q in targets:
                self.emit(_rotation_event(m, addressed_channel(q), self.cursor,
                                          ins.theta, 0.0, (q,), kind="ac_stark"))
            return
        if isinstance(ins, MS):
            targets = _expand_targets(ins.targets, m.n_qubits)
            dur = m.grid_ns(m.t_ms_us * 1000.0)
            # Tones are symbolic sideband offsets +-(nu + delta); the dynamics
            # engine resolves them against its calibration.
            self.emit(Event(
                channel=GLOBAL_CHANNEL, start=self.cursor, duration=dur,
                kind="bichromatic", amplitude=1.0, tones=(+1.0, -1.0),
                targets=targets, angle=ins.chi, bus=ins.bus,
            ))
            return
        if isinstance(ins, Delay):
            if ins.duration_us < 0:
                raise ValueError("delay must be non-negative")
            self.cursor += m.grid_ns(ins.duration_us * 1000.0)
            return
        if isinstance(ins, MeasureAll):
            dur = m.grid_ns(m.t_measure_us * 1000.0)
            ev = Event(channel=GLOBAL_CHANNEL, start=self.cursor, duration=dur,
                       kind="measure", targets=tuple(range(m.n_qubits)), label=ins.label)
            self.emit(ev)
            self.measure_ends[ins.label] = ev.end
            return
        if isinstance(ins, Branch):
            if ins.label not in self.measure_ends:
                raise UnknownLabel(f"branch references unknown label {ins.label!r}")
            latency = self.m.grid_ns(m.branch_latency_us * 1000.0)
            start = max(self.cursor, self.measure_ends[ins.label] + latency)
            sub = _Compiler(m)
            sub.frames = list(self.frames)
            for sub_ins in ins.body:
                sub.compile_instruction(sub_ins)
            body = tuple(sub.events)
            self.frames = sub.frames
            self.events.append(Event(
                channel=GLOBAL_CHANNEL, start=start, duration=0, kind="branch_point",
                label=ins.label, predicate=tuple(ins.predicate), body=body,
            ))
            # Reserve the slot whether or not the branch fires.
            self.cursor = start + sub.cursor
            return
        raise TypeError(f"unknown instruction {ins!r}")


def compile_circuit(circuit: CircuitIR, machine: MachineConfig) -> PulseSchedule:
    """Translate a circuit into a validated pulse schedule."""
    circuit.validate(machine.n_qubits)
    c = _Compiler(machine)
    for ins in circuit.instructions:
        c.compile_instruction(ins)
    schedule = PulseSchedule(tuple(c.events), tuple(c.frames),
                             machine.timing_grid_ns, machine.n_qubits)
    violations = validate(schedule, machine)
    if violations:
        raise GridViolation("; ".join(violations))
    return schedule


def validate(schedule: PulseSchedule, machine: MachineConfig) -> list:
    """Return all violations (grid alignment, channel overlap, branch latency)."""
    out = []
    grid = machine.timing_grid_ns
    by_channel = {}
    measure_ends = {}
    for i, e in enumerate(schedule.events):
        if e.start % grid or e.duration % grid:
            out.append(f"event {i} ({e.kind}) off the {grid} ns grid")
        if e.channel not in machine.channels:
            out.append(f"event {i} uses unknown channel {e.channel!r}")
        if e.duration > 0:
            by_channel.setdefault(e.channel, []).append((e.start, e.end, i))
        if e.kind == "measure":
            measure_ends[e.label] = e.end
    for ch, spans in by_channel.items():
        spans.sort()
        for (s1, e1, i1), (s2, e2, i2) in zip(spans, spans[1:]):
            if s2 < e1:
                out.append(f"events {i1} and {i2} overlap on channel {ch}")
    latency = machine.grid_ns(machine.branch_latency_us * 1000.0)
    for i, e in enumerate(schedule.events):
        if e.kind == "branch_point":
            if e.label not in measure_ends:
                out.append(f"branch event {i} references unknown label {e.label!r}")
            elif e.start < measure_ends[e.label] + latency:
                out.append(f"branch event {i} starts before the {latency} ns branch latency")
    return out


def predicate_matches(predicate, outcome_bits) -> bool:
    """Conjunction of per-qubit bright/dark tests against measured bits."""
    for q, want in predicate:
        bit = outcome_bits[q]
        if want == "bright" and bit != 1:
            return False
        if want == "dark" and bit != 0:
            return False
    return True


def resolve_branch(schedule: PulseSchedule, outcome_bits, label: str = None) -> list:
    """Continuation events for a measured outcome pattern.

    Returns the branch body shifted to absolute time when the predicate
    matches, else an empty list.
    """
    if len(outcome_bits) != schedule.n_qubits:
        raise ValueError("outcome pattern length must equal register size")
    branches = [e for e in schedule.events if e.kind == "branch_point"
                and (label is None or e.label == label)]
    if label is not None and not branches:
        raise UnknownLabel(f"no branch with label {label!r}")
    out = []
    for bp in branches:
        if predicate_matches(bp.predicate, outcome_bits):
            out.extend(replace(e, start=e.start + bp.start) for e in bp.body)
    return out


# ---------------------------------------------------------------------------
# Circuit text format
# ---------------------------------------------------------------------------
#
#   PREPARE
#   R 1.5707963 0.0 all
#   RZ 1.0471976 0
#   MS 0.7853982 0,1 axial
#   MEASURE m0
#   BRANCH m0 q0=bright { R 3.1415927 0.0 0 }

_BRANCH_RE = re.compile(r"^BRANCH\s+(\S+)\s+(.*?)\s*\{(.*)\}\s*$")


def _parse_targets(tok: str):
    if tok == "all":
        return "all"
    return tuple(int(t) for t in tok.split(","))


def _parse_line(line: str):
    parts = line.split()
    op = parts[0].upper()
    if op == "PREPARE":
        return PrepareAll()
    if op == "R":
        return R(float(parts[1]), float(parts[2]), _parse_targets(parts[3]))
    if op == "RZ":
        return RZ(float(parts[1]), _parse_targets(parts[2]))
    if op == "MS":
        bus = parts[3] if len(parts) > 3 else "axial"
        return MS(float(parts[1]), _parse_targets(parts[2]), bus)
    if op == "DELAY":
        return Delay(float(parts[1]))
    if op == "MEASURE":
        return MeasureAll(parts[1])
    raise ValueError(f"unknown instruction line: {line!r}")


def parse_circuit(text: str) -> CircuitIR:
    """Parse the line-oriented circuit format."""
    instructions = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _BRANCH_RE.match(line)
        if m:
            label, preds, body = m.groups()
            predicate = []
            for p in preds.split():
                qtok, want = p.split("=")
                predicate.append((int(qtok.lstrip("q")), want))
            body_ins = tuple(_parse_line(s.strip()) for s in body.split(";") if s.strip())
            instructions.append(Branch(label, tuple(predicate), body_ins))
        else:
            instructions.append(_parse_line(line))
    return CircuitIR(tuple(instructions))
