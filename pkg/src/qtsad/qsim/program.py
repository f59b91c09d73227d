"""Circuit program representation: gates, angle bindings, and noise settings.

A program is a flat list of gates over a fixed register.  The gate alphabet
is deliberately small (RX/RY/RZ rotations plus CNOT); rotation angles are
bound either to a constant, to a trainable parameter slot, or to an input
slot whose raw value is squashed by an encoding function inside the gate.

Conventions (fixed across the package):
  * qubit 0 is the most significant bit of a basis-state index;
  * rotations follow R_P(theta) = exp(-i * theta * P / 2).
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from qtsad.errors import ConfigError, CsvParseError


class GateKind(enum.Enum):
    RX = "rx"
    RY = "ry"
    RZ = "rz"
    CNOT = "cnot"


class Encoding(enum.Enum):
    """Squashing function applied to an input value to obtain an angle."""

    ARCTAN = "arctan"
    ARCCOS = "arccos"


# Clamp bound for the arccos encoding; arctan needs no clamping.
_ARCCOS_BOUND = 1.0 - 1e-6


def encode_value(encoding: Encoding, value: np.ndarray | float) -> np.ndarray | float:
    """Map raw input value(s) to rotation angle(s)."""
    if encoding is Encoding.ARCTAN:
        return np.arctan(value)
    return np.arccos(np.clip(value, -_ARCCOS_BOUND, _ARCCOS_BOUND))


def encode_grad(encoding: Encoding, value: np.ndarray | float) -> np.ndarray | float:
    """Derivative of :func:`encode_value` with respect to the raw value.

    For the arccos encoding the derivative is zero outside the clamp range.
    """
    v = np.asarray(value, dtype=np.float64)
    if encoding is Encoding.ARCTAN:
        return 1.0 / (1.0 + v * v)
    inside = np.abs(v) < _ARCCOS_BOUND
    clipped = np.clip(v, -_ARCCOS_BOUND, _ARCCOS_BOUND)
    return np.where(inside, -1.0 / np.sqrt(1.0 - clipped * clipped), 0.0)


@dataclass(frozen=True)
class Constant:
    value: float


@dataclass(frozen=True)
class Param:
    slot: int


@dataclass(frozen=True)
class Input:
    slot: int
    encoding: Encoding = Encoding.ARCTAN


AngleSource = Constant | Param | Input


@dataclass(frozen=True)
class GateOp:
    """One gate: a rotation with an angle source, or a CNOT (angle is None)."""

    kind: GateKind
    wires: tuple[int, ...]
    angle: AngleSource | None = None


@dataclass(frozen=True)
class NoiseSpec:
    """Stochastic gate-error settings for trajectory-style noise simulation."""

    enabled: bool = False
    p_single: float = 0.1
    p_cnot: float = 0.2
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("p_single", "p_cnot"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {p}")


@dataclass(frozen=True)
class CircuitProgram:
    """Validated gate list with declared parameter and input slot counts."""

    n_qubits: int
    ops: tuple[GateOp, ...]
    n_param_slots: int = 0
    n_input_slots: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "ops", tuple(self.ops))
        self.validate()

    def validate(self) -> None:
        if self.n_qubits < 1:
            raise ConfigError(f"n_qubits must be positive, got {self.n_qubits}")
        param_seen = np.zeros(self.n_param_slots, dtype=np.int64)
        input_seen = np.zeros(self.n_input_slots, dtype=np.int64)
        for op in self.ops:
            for w in op.wires:
                if not 0 <= w < self.n_qubits:
                    raise ConfigError(f"wire {w} out of range for {self.n_qubits} qubits")
            if op.kind is GateKind.CNOT:
                if len(op.wires) != 2 or op.wires[0] == op.wires[1]:
                    raise ConfigError(f"CNOT needs two distinct wires, got {op.wires}")
                if op.angle is not None:
                    raise ConfigError("CNOT takes no angle")
                continue
            if len(op.wires) != 1:
                raise ConfigError(f"rotation acts on one wire, got {op.wires}")
            if op.angle is None:
                raise ConfigError("rotation needs an angle source")
            if isinstance(op.angle, Param):
                if not 0 <= op.angle.slot < self.n_param_slots:
                    raise ConfigError(f"param slot {op.angle.slot} out of range")
                param_seen[op.angle.slot] += 1
            elif isinstance(op.angle, Input):
                if not 0 <= op.angle.slot < self.n_input_slots:
                    raise ConfigError(f"input slot {op.angle.slot} out of range")
                input_seen[op.angle.slot] += 1
            elif not math.isfinite(op.angle.value):
                raise ConfigError("constant angle must be finite")
        if self.n_param_slots and (param_seen == 0).any():
            unused = int(np.flatnonzero(param_seen == 0)[0])
            raise ConfigError(f"param slot {unused} is never referenced")
        if self.n_input_slots and (input_seen != 1).any():
            bad = int(np.flatnonzero(input_seen != 1)[0])
            raise ConfigError(f"input slot {bad} must be referenced exactly once")


_FORMAT_TAG = "qprog 1"


def program_to_text(program: CircuitProgram) -> str:
    """Serialize a program to the versioned line-oriented debug format."""
    lines = [
        _FORMAT_TAG,
        f"qubits {program.n_qubits}",
        f"params {program.n_param_slots}",
        f"inputs {program.n_input_slots}",
    ]
    for op in program.ops:
        if op.kind is GateKind.CNOT:
            lines.append(f"gate cnot {op.wires[0]} {op.wires[1]}")
        elif isinstance(op.angle, Constant):
            lines.append(f"gate {op.kind.value} {op.wires[0]} const {op.angle.value!r}")
        elif isinstance(op.angle, Param):
            lines.append(f"gate {op.kind.value} {op.wires[0]} param {op.angle.slot}")
        else:
            lines.append(
                f"gate {op.kind.value} {op.wires[0]} input {op.angle.slot} {op.angle.encoding.value}"
            )
    return "\n".join(lines) + "\n"


def program_from_text(text: str) -> CircuitProgram:
    """Parse the format produced by :func:`program_to_text`."""
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != _FORMAT_TAG:
        raise CsvParseError(f"expected header {_FORMAT_TAG!r}", row=1)
    header: dict[str, int] = {}
    for i, key in enumerate(("qubits", "params", "inputs"), start=1):
        if i >= len(lines) or not lines[i].startswith(key + " "):
            raise CsvParseError(f"expected '{key} <n>' line", row=i + 1)
        header[key] = int(lines[i].split()[1])
    ops: list[GateOp] = []
    for row, line in enumerate(lines[4:], start=5):
        parts = line.split()
        if parts[0] != "gate":
            raise CsvParseError(f"expected gate line, got {line!r}", row=row)
        kind = GateKind(parts[1])
        if kind is GateKind.CNOT:
            ops.append(GateOp(kind, (int(parts[2]), int(parts[3]))))
            continue
        wire, source = int(parts[2]), parts[3]
        if source == "const":
            angle: AngleSource = Constant(float(parts[4]))
        elif source == "param":
            angle = Param(int(parts[4]))
        elif source == "input":
            angle = Input(int(parts[4]), Encoding(parts[5]))
        else:
            raise CsvParseError(f"unknown angle source {source!r}", row=row)
        ops.append(GateOp(kind, (wire,), angle))
    return CircuitProgram(
        n_qubits=header["qubits"],
        ops=tuple(ops),
        n_param_slots=header["params"],
        n_input_slots=header["inputs"],
    )
