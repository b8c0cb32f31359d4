"""Network data model and case file I/O.

A grid case describes a transmission network as buses, branches,
generators and substations, with electrical quantities in per-unit on a
common MVA base. Cases are immutable once constructed, so they can be
shared freely across worker processes.

The on-disk format is a plain text file with an optional ``base_mva``
preamble line followed by ``[BUS]``, ``[BRANCH]``, ``[GEN]`` and
``[SUBSTATION]`` sections. Columns are whitespace delimited, in the
declaration order of the corresponding dataclass fields; ``#`` starts a
comment. When no ``[SUBSTATION]`` section is present, every bus forms
its own single-bus substation, which matches the common usage where
"substation 100" simply denotes bus 100.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path
from typing import Iterable, Union

__all__ = [
    "Bus",
    "Branch",
    "Generator",
    "Substation",
    "GridCase",
    "CaseSummary",
    "CaseFormatError",
    "CaseValidationError",
    "load_case",
    "loads_case",
    "save_case",
    "validate",
    "summarize",
]

BUS_KINDS = ("slack", "PV", "PQ")

SubstationId = Union[int, str]


class CaseFormatError(ValueError):
    """Raised when a case file cannot be parsed.

    Carries the 1-based line number of the offending line.
    """

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class CaseValidationError(ValueError):
    """Raised when a loaded case violates a structural invariant."""

    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


@dataclass(frozen=True)
class Bus:
    """A network node.

    Attributes:
        id: Positive integer identifier, unique within a case.
        kind: One of ``slack``, ``PV``, ``PQ``.
        voltage_magnitude: Initial/solved voltage magnitude in per-unit.
        voltage_angle: Initial/solved voltage angle in radians.
        base_kv: Nominal voltage level in kV.
        load_p: Active power demand in MW.
        load_q: Reactive power demand in MVAr.
    """

    id: int
    kind: str = "PQ"
    voltage_magnitude: float = 1.0
    voltage_angle: float = 0.0
    base_kv: float = 138.0
    load_p: float = 0.0
    load_q: float = 0.0

    @property
    def has_load(self) -> bool:
        """True when the bus carries active demand (MW); pure reactive
        compensation folded into ``load_q`` does not make a load bus."""
        return self.load_p != 0.0


@dataclass(frozen=True)
class Branch:
    """A transmission line or transformer between two buses.

    ``tap_ratio`` is 1.0 for plain lines; ``total_charging`` is the full
    line charging susceptance in per-unit (split evenly between the two
    ends in the pi model). ``status`` False means out of service.
    """

    from_bus: int
    to_bus: int
    resistance: float
    reactance: float
    total_charging: float = 0.0
    rating: float = 0.0
    tap_ratio: float = 1.0
    is_transformer: bool = False
    status: bool = True

    @property
    def endpoints(self) -> tuple[int, int]:
        """Orientation-free endpoint pair (low bus id first)."""
        a, b = self.from_bus, self.to_bus
        return (a, b) if a <= b else (b, a)


@dataclass(frozen=True)
class Generator:
    """A synchronous machine: generator or synchronous condenser.

    Condensers (``is_condenser``) hold zero active output and exist for
    reactive support; they count separately from generators in summaries
    and island viability checks.
    """

    bus: int
    p_output: float
    q_output: float = 0.0
    q_min: float = -9999.0
    q_max: float = 9999.0
    v_setpoint: float = 1.0
    mva_base: float = 100.0
    is_condenser: bool = False


@dataclass(frozen=True)
class Substation:
    """A named group of buses that is lost as a unit in an outage."""

    id: SubstationId
    member_buses: frozenset[int]


@dataclass(frozen=True)
class GridCase:
    """Immutable network case: buses, branches, machines, substations."""

    base_mva: float
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...]
    substations: tuple[Substation, ...]

    @cached_property
    def bus_index(self) -> dict[int, int]:
        """Bus id -> position in ``buses``."""
        return {b.id: i for i, b in enumerate(self.buses)}

    @cached_property
    def substation_index(self) -> dict[SubstationId, Substation]:
        return {s.id: s for s in self.substations}

    def bus(self, bus_id: int) -> Bus:
        return self.buses[self.bus_index[bus_id]]

    def in_service_branches(self) -> tuple[Branch, ...]:
        return tuple(br for br in self.branches if br.status)

    def machines_at(self, bus_id: int) -> tuple[Generator, ...]:
        return tuple(g for g in self.generators if g.bus == bus_id)

    def with_(self, **kwargs) -> "GridCase":
        """Functional update preserving immutability."""
        return replace(self, **kwargs)


def default_substations(buses: Iterable[Bus]) -> tuple[Substation, ...]:
    """One single-bus substation per bus, id equal to the bus id."""
    return tuple(Substation(id=b.id, member_buses=frozenset((b.id,))) for b in buses)


@dataclass(frozen=True)
class CaseSummary:
    """Inventory counts for a case; ``loads`` counts nonzero-load buses."""

    buses: int
    branches: int
    lines: int
    transformers: int
    generators: int
    condensers: int
    loads: int
    substations: int


def summarize(case: GridCase) -> CaseSummary:
    """Count the case inventory.

    Generators and condensers are distinguished by the ``is_condenser``
    flag; ``loads`` counts buses with nonzero active demand.
    """
    n_xfmr = sum(1 for br in case.branches if br.is_transformer)
    n_cond = sum(1 for g in case.generators if g.is_condenser)
    return CaseSummary(
        buses=len(case.buses),
        branches=len(case.branches),
        lines=len(case.branches) - n_xfmr,
        transformers=n_xfmr,
        generators=len(case.generators) - n_cond,
        condensers=n_cond,
        loads=sum(1 for b in case.buses if b.has_load),
        substations=len(case.substations),
    )


def validate(case: GridCase) -> list[str]:
    """Check structural invariants; returns violation messages (empty if OK).

    Violations are data, not exceptions: callers decide whether to raise.
    """
    out: list[str] = []
    if case.base_mva <= 0:
        out.append(f"case: base_mva must be positive, got {case.base_mva}")

    seen: set[int] = set()
    for b in case.buses:
        if b.id in seen:
            out.append(f"bus {b.id}: duplicate id")
        seen.add(b.id)
        if b.id <= 0:
            out.append(f"bus {b.id}: id must be a positive integer")
        if b.kind not in BUS_KINDS:
            out.append(f"bus {b.id}: unknown kind {b.kind!r}")
        if b.voltage_magnitude <= 0:
            out.append(f"bus {b.id}: initial voltage magnitude must be > 0")

    n_slack = sum(1 for b in case.buses if b.kind == "slack")
    if n_slack != 1:
        out.append(f"case: expected exactly one slack bus, found {n_slack}")

    ids = {b.id for b in case.buses}
    for br in case.branches:
        tag = f"branch {br.from_bus}-{br.to_bus}"
        if br.from_bus not in ids or br.to_bus not in ids:
            out.append(f"{tag}: endpoint bus does not exist")
        if br.resistance == 0.0 and br.reactance == 0.0:
            out.append(f"{tag}: resistance and reactance are both zero")
        if br.rating < 0:
            out.append(f"{tag}: rating must be >= 0")
        if br.tap_ratio <= 0:
            out.append(f"{tag}: tap ratio must be > 0")

    if not case.generators:
        out.append("case: at least one generator is required")
    for g in case.generators:
        tag = f"generator at bus {g.bus}"
        if g.bus not in ids:
            out.append(f"{tag}: bus does not exist")
        if g.q_min > g.q_max:
            out.append(f"{tag}: q_min exceeds q_max")
        if g.is_condenser and g.p_output != 0.0:
            out.append(f"{tag}: condenser must have zero active output")

    covered: set[int] = set()
    for s in case.substations:
        tag = f"substation {s.id}"
        if not s.member_buses:
            out.append(f"{tag}: member bus set is empty")
        unknown = s.member_buses - ids
        if unknown:
            out.append(f"{tag}: unknown member buses {sorted(unknown)}")
        overlap = covered & s.member_buses
        if overlap:
            out.append(f"{tag}: buses {sorted(overlap)} already belong to another substation")
        covered |= s.member_buses
    if case.substations and covered != ids:
        missing = sorted(ids - covered)
        out.append(f"case: buses {missing} belong to no substation")

    return out


# ---------------------------------------------------------------------------
# Text format I/O
# ---------------------------------------------------------------------------

_SECTIONS = ("[BUS]", "[BRANCH]", "[GEN]", "[SUBSTATION]")


def _parse_bool(tok: str, line_no: int) -> bool:
    if tok in ("0", "1"):
        return tok == "1"
    raise CaseFormatError(line_no, f"expected 0/1 flag, got {tok!r}")


def _parse_float(tok: str, line_no: int) -> float:
    try:
        return float(tok)
    except ValueError:
        raise CaseFormatError(line_no, f"expected a number, got {tok!r}") from None


def _parse_int(tok: str, line_no: int) -> int:
    try:
        return int(tok)
    except ValueError:
        raise CaseFormatError(line_no, f"expected an integer, got {tok!r}") from None


def loads_case(text: str, check: bool = True) -> GridCase:
    """Parse a case from a string. See :func:`load_case`."""
    base_mva = 100.0
    buses: list[Bus] = []
    branches: list[Branch] = []
    gens: list[Generator] = []
    subs: list[Substation] = []
    section: str | None = None

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if line not in _SECTIONS:
                raise CaseFormatError(line_no, f"unknown section {line}")
            section = line
            continue
        toks = line.split()
        if section is None:
            if toks[0] == "base_mva" and len(toks) == 2:
                base_mva = _parse_float(toks[1], line_no)
                continue
            raise CaseFormatError(line_no, f"data before any section: {line!r}")
        if section == "[BUS]":
            if len(toks) != 7:
                raise CaseFormatError(line_no, f"[BUS] rows take 7 columns, got {len(toks)}")
            kind = toks[1]
            if kind not in BUS_KINDS:
                raise CaseFormatError(line_no, f"unknown bus kind {kind!r}")
            buses.append(
                Bus(
                    id=_parse_int(toks[0], line_no),
                    kind=kind,
                    voltage_magnitude=_parse_float(toks[2], line_no),
                    voltage_angle=_parse_float(toks[3], line_no),
                    base_kv=_parse_float(toks[4], line_no),
                    load_p=_parse_float(toks[5], line_no),
                    load_q=_parse_float(toks[6], line_no),
                )
            )
        elif section == "[BRANCH]":
            if len(toks) != 9:
                raise CaseFormatError(line_no, f"[BRANCH] rows take 9 columns, got {len(toks)}")
            branches.append(
                Branch(
                    from_bus=_parse_int(toks[0], line_no),
                    to_bus=_parse_int(toks[1], line_no),
                    resistance=_parse_float(toks[2], line_no),
                    reactance=_parse_float(toks[3], line_no),
                    total_charging=_parse_float(toks[4], line_no),
                    rating=_parse_float(toks[5], line_no),
                    tap_ratio=_parse_float(toks[6], line_no),
                    is_transformer=_parse_bool(toks[7], line_no),
                    status=_parse_bool(toks[8], line_no),
                )
            )
        elif section == "[GEN]":
            if len(toks) != 8:
                raise CaseFormatError(line_no, f"[GEN] rows take 8 columns, got {len(toks)}")
            gens.append(
                Generator(
                    bus=_parse_int(toks[0], line_no),
                    p_output=_parse_float(toks[1], line_no),
                    q_output=_parse_float(toks[2], line_no),
                    q_min=_parse_float(toks[3], line_no),
                    q_max=_parse_float(toks[4], line_no),
                    v_setpoint=_parse_float(toks[5], line_no),
                    mva_base=_parse_float(toks[6], line_no),
                    is_condenser=_parse_bool(toks[7], line_no),
                )
            )
        elif section == "[SUBSTATION]":
            if len(toks) < 2:
                raise CaseFormatError(line_no, "[SUBSTATION] rows take an id plus member buses")
            sid: SubstationId = int(toks[0]) if toks[0].lstrip("-").isdigit() else toks[0]
            subs.append(
                Substation(
                    id=sid,
                    member_buses=frozenset(_parse_int(t, line_no) for t in toks[1:]),
                )
            )

    case = GridCase(
        base_mva=base_mva,
        buses=tuple(buses),
        branches=tuple(branches),
        generators=tuple(gens),
        substations=tuple(subs) if subs else default_substations(buses),
    )
    if check:
        problems = validate(case)
        if problems:
            raise CaseValidationError(problems)
    return case


def load_case(path: str | Path, check: bool = True) -> GridCase:
    """Load and validate a case file.

    Args:
        path: Case file path.
        check: Run :func:`validate` and raise on violations.

    Raises:
        CaseFormatError: On malformed input, with the line number.
        CaseValidationError: When ``check`` and an invariant fails.
    """
    return loads_case(Path(path).read_text(), check=check)


def dumps_case(case: GridCase) -> str:
    """Serialize to the text format; inverse of :func:`loads_case`.

    Floats are written with ``repr`` so a save/load round trip is exact.
    """
    f = lambda x: repr(float(x))  # noqa: E731 - local shorthand
    out: list[str] = [f"base_mva {f(case.base_mva)}", ""]
    out.append("[BUS]")
    out.append("# id kind vm_pu va_rad base_kv load_mw load_mvar")
    for b in case.buses:
        out.append(
            f"{b.id} {b.kind} {f(b.voltage_magnitude)} {f(b.voltage_angle)} "
            f"{f(b.base_kv)} {f(b.load_p)} {f(b.load_q)}"
        )
    out.append("")
    out.append("[BRANCH]")
    out.append("# from to r_pu x_pu b_pu rating_mva tap xfmr status")
    for br in case.branches:
        out.append(
            f"{br.from_bus} {br.to_bus} {f(br.resistance)} {f(br.reactance)} "
            f"{f(br.total_charging)} {f(br.rating)} {f(br.tap_ratio)} "
            f"{int(br.is_transformer)} {int(br.status)}"
        )
    out.append("")
    out.append("[GEN]")
    out.append("# bus p_mw q_mvar q_min q_max v_set mva_base condenser")
    for g in case.generators:
        out.append(
            f"{g.bus} {f(g.p_output)} {f(g.q_output)} {f(g.q_min)} {f(g.q_max)} "
            f"{f(g.v_setpoint)} {f(g.mva_base)} {int(g.is_condenser)}"
        )
    out.append("")
    out.append("[SUBSTATION]")
    out.append("# id member_buses...")
    for s in case.substations:
        out.append(f"{s.id} " + " ".join(str(b) for b in sorted(s.member_buses)))
    out.append("")
    return "\n".join(out)


def save_case(case: GridCase, path: str | Path) -> None:
    """Write the case to ``path`` in the text format."""
    Path(path).write_text(dumps_case(case))
