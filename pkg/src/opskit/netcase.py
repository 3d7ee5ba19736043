"""Network case model: buses, lines, generators, loads, shunts.

All electrical quantities are stored in per-unit on the case MVA base.
Networks are built by the parsers in this module and treated as immutable
afterwards; nothing in the package mutates a Network once constructed.

Two input formats are supported:

* a pragmatic subset of the MATPOWER case format (``mpc.baseMVA``,
  ``mpc.bus``, ``mpc.gen``, ``mpc.branch``; ``mpc.gencost`` is ignored),
* a native JSON format that round-trips exactly (see ``parse_native`` /
  ``emit_native``).
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

__all__ = [
    "Bus", "Line", "Generator", "Load", "Shunt", "Network",
    "Diagnostic", "CaseError",
    "parse_matpower", "parse_native", "emit_native", "validate",
    "load_case", "bundled_case_names",
]

# Angle-difference limits are clamped into (-ANGLE_CLAMP, ANGLE_CLAMP) so
# that voltage-product bounds stay well defined (cos must remain positive).
ANGLE_CLAMP = math.radians(89.0)
DEFAULT_ANGLE = math.radians(30.0)


class CaseError(ValueError):
    """Raised for unreadable or structurally invalid case input."""


@dataclass(frozen=True)
class Bus:
    id: int
    vmin: float
    vmax: float


@dataclass(frozen=True)
class Line:
    id: int
    from_bus: int
    to_bus: int
    g_series: float
    b_series: float
    g_fr: float
    b_fr: float
    g_to: float
    b_to: float
    tap_re: float
    tap_im: float
    thermal: float
    ang_min: float
    ang_max: float

    @property
    def tap_mag2(self) -> float:
        return self.tap_re * self.tap_re + self.tap_im * self.tap_im


@dataclass(frozen=True)
class Generator:
    id: int
    bus: int
    pmin: float
    pmax: float
    qmin: float
    qmax: float


@dataclass(frozen=True)
class Load:
    id: int
    bus: int
    pd: float
    qd: float
    weight: float = 1.0


@dataclass(frozen=True)
class Shunt:
    id: int
    bus: int
    gs: float
    bs: float


@dataclass(frozen=True)
class Network:
    """A parsed case. Component dicts are keyed by id and iterate in
    deterministic (input) order."""

    name: str
    base_mva: float
    buses: dict[int, Bus] = field(default_factory=dict)
    lines: dict[int, Line] = field(default_factory=dict)
    generators: dict[int, Generator] = field(default_factory=dict)
    loads: dict[int, Load] = field(default_factory=dict)
    shunts: dict[int, Shunt] = field(default_factory=dict)

    def total_demand(self) -> float:
        """Sum of active-power demand magnitudes, p.u."""
        return sum(abs(d.pd) for d in self.loads.values())

    def lines_at(self, bus_id: int) -> list[Line]:
        return [ln for ln in self.lines.values()
                if ln.from_bus == bus_id or ln.to_bus == bus_id]

    def generators_at(self, bus_id: int) -> list[Generator]:
        return [g for g in self.generators.values() if g.bus == bus_id]

    def loads_at(self, bus_id: int) -> list[Load]:
        return [d for d in self.loads.values() if d.bus == bus_id]

    def shunts_at(self, bus_id: int) -> list[Shunt]:
        return [s for s in self.shunts.values() if s.bus == bus_id]


@dataclass(frozen=True)
class Diagnostic:
    component: str
    rule: str
    message: str

    def __str__(self) -> str:
        return f"{self.component}: {self.rule}: {self.message}"


def default_thermal(total_pd: float, total_pmax: float) -> float:
    """Non-binding rating substituted for blank (zero) branch ratings:
    twice total demand plus total generation capability."""
    return 2.0 * total_pd + total_pmax


def _normalize_angles(ang_min_deg: float, ang_max_deg: float) -> tuple[float, float]:
    """Convert file angle-difference limits (degrees) to clamped radians.

    A 0/0 pair means "not given" and gets the +-30 degree default. Very wide
    limits (+-360 in many distributed case files) are clamped just inside
    +-90 degrees.
    """
    if ang_min_deg == 0.0 and ang_max_deg == 0.0:
        return -DEFAULT_ANGLE, DEFAULT_ANGLE
    lo = math.radians(ang_min_deg)
    hi = math.radians(ang_max_deg)
    lo = min(max(lo, -ANGLE_CLAMP), ANGLE_CLAMP)
    hi = min(max(hi, -ANGLE_CLAMP), ANGLE_CLAMP)
    return lo, hi


def _matrix_rows(name: str, body: str) -> list[tuple[int, list[float]]]:
    rows = []
    for k, chunk in enumerate(body.replace("\n", " ").split(";")):
        chunk = chunk.strip()
        if not chunk:
            continue
        try:
            rows.append((k + 1, [float(tok) for tok in chunk.split()]))
        except ValueError as exc:
            raise CaseError(f"{name} row {k + 1}: unreadable entry ({exc})") from None
    return rows


def parse_matpower(text: str, name: str = "case") -> Network:
    """Parse a MATPOWER-style case given as text.

    Out-of-service branches and generators (status column <= 0) are dropped.
    Loads and shunts are lifted out of the bus table and given sequential
    ids in bus order. Branch ratings of zero are replaced by a non-binding
    default, and blank (0/0) angle-difference limits by +-30 degrees.
    """
    stripped = re.sub(r"%[^\n]*", "", text)

    m = re.search(r"mpc\.baseMVA\s*=\s*([0-9eE.+-]+)\s*;", stripped)
    if not m:
        raise CaseError("missing mpc.baseMVA")
    base = float(m.group(1))
    if base <= 0:
        raise CaseError(f"baseMVA must be positive, got {base}")

    tables: dict[str, list[tuple[int, list[float]]]] = {}
    for m in re.finditer(r"mpc\.(\w+)\s*=\s*\[([^\]]*)\]\s*;", stripped):
        tables[m.group(1)] = _matrix_rows(f"mpc.{m.group(1)}", m.group(2))
    for required in ("bus", "gen", "branch"):
        if required not in tables:
            raise CaseError(f"missing mpc.{required} table")

    buses: dict[int, Bus] = {}
    loads: dict[int, Load] = {}
    shunts: dict[int, Shunt] = {}
    for rownum, row in tables["bus"]:
        if len(row) < 13:
            raise CaseError(f"mpc.bus row {rownum}: expected >= 13 columns, got {len(row)}")
        bus_id = int(row[0])
        if bus_id in buses:
            raise CaseError(f"mpc.bus row {rownum}: duplicate bus id {bus_id}")
        buses[bus_id] = Bus(id=bus_id, vmin=row[12], vmax=row[11])
        pd, qd = row[2] / base, row[3] / base
        if pd != 0.0 or qd != 0.0:
            k = len(loads) + 1
            loads[k] = Load(id=k, bus=bus_id, pd=pd, qd=qd, weight=1.0)
        gs, bs = row[4] / base, row[5] / base
        if gs != 0.0 or bs != 0.0:
            k = len(shunts) + 1
            shunts[k] = Shunt(id=k, bus=bus_id, gs=gs, bs=bs)

    gens: dict[int, Generator] = {}
    total_pmax = 0.0
    for rownum, row in tables["gen"]:
        if len(row) < 10:
            raise CaseError(f"mpc.gen row {rownum}: expected >= 10 columns, got {len(row)}")
        if row[7] <= 0:
            continue
        bus_id = int(row[0])
        if bus_id not in buses:
            raise CaseError(f"mpc.gen row {rownum}: unknown bus {bus_id}")
        k = len(gens) + 1
        gens[k] = Generator(id=k, bus=bus_id, pmin=row[9] / base, pmax=row[8] / base,
                            qmin=row[4] / base, qmax=row[3] / base)
        total_pmax += row[8] / base

    total_pd = sum(abs(d.pd) for d in loads.values())
    rating_floor = default_thermal(total_pd, total_pmax)

    lines: dict[int, Line] = {}
    for rownum, row in tables["branch"]:
        if len(row) < 13:
            raise CaseError(f"mpc.branch row {rownum}: expected >= 13 columns, got {len(row)}")
        if row[10] <= 0:
            continue
        f_bus, t_bus = int(row[0]), int(row[1])
        for b in (f_bus, t_bus):
            if b not in buses:
                raise CaseError(f"mpc.branch row {rownum}: unknown bus {b}")
        r, x = row[2], row[3]
        denom = r * r + x * x
        if denom == 0.0:
            raise CaseError(f"mpc.branch row {rownum}: zero series impedance")
        tap = row[8] if row[8] != 0.0 else 1.0
        shift = math.radians(row[9])
        ang_lo, ang_hi = _normalize_angles(row[11], row[12])
        k = len(lines) + 1
        lines[k] = Line(
            id=k, from_bus=f_bus, to_bus=t_bus,
            g_series=r / denom, b_series=-x / denom,
            g_fr=0.0, b_fr=row[4] / 2.0, g_to=0.0, b_to=row[4] / 2.0,
            tap_re=tap * math.cos(shift), tap_im=tap * math.sin(shift),
            thermal=(row[5] / base) if row[5] > 0.0 else rating_floor,
            ang_min=ang_lo, ang_max=ang_hi,
        )

    net = Network(name=name, base_mva=base, buses=buses, lines=lines,
                  generators=gens, loads=loads, shunts=shunts)
    _raise_on_hard_errors(net)
    return net


_NATIVE_FIELDS = {
    "buses": ("id", "vmin", "vmax"),
    "lines": ("id", "from_bus", "to_bus", "g_series", "b_series", "g_fr", "b_fr",
              "g_to", "b_to", "tap_re", "tap_im", "thermal", "ang_min", "ang_max"),
    "generators": ("id", "bus", "pmin", "pmax", "qmin", "qmax"),
    "loads": ("id", "bus", "pd", "qd", "weight"),
    "shunts": ("id", "bus", "gs", "bs"),
}
_NATIVE_TYPES = {"buses": Bus, "lines": Line, "generators": Generator,
                 "loads": Load, "shunts": Shunt}


def parse_native(text: str, name: str = "case") -> Network:
    """Parse the native JSON case format.

    The document has a ``base_mva`` number and one list per component kind;
    every entry carries all fields explicitly (already per-unit). Errors
    name the offending field path.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CaseError(f"invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise CaseError("top level must be an object")
    if "base_mva" not in doc:
        raise CaseError("missing field base_mva")
    base = doc["base_mva"]
    if not isinstance(base, (int, float)) or base <= 0:
        raise CaseError("base_mva must be a positive number")

    parts: dict[str, dict] = {}
    for kind, fields in _NATIVE_FIELDS.items():
        entries = doc.get(kind, [])
        if not isinstance(entries, list):
            raise CaseError(f"{kind} must be a list")
        out: dict[int, object] = {}
        for i, entry in enumerate(entries):
            if not isinstance(entry, dict):
                raise CaseError(f"{kind}[{i}] must be an object")
            kwargs = {}
            for f in fields:
                if f not in entry:
                    if kind == "loads" and f == "weight":
                        kwargs[f] = 1.0
                        continue
                    raise CaseError(f"{kind}[{i}].{f}: missing")
                v = entry[f]
                if f in ("id", "bus", "from_bus", "to_bus"):
                    if not isinstance(v, int):
                        raise CaseError(f"{kind}[{i}].{f}: must be an integer")
                elif not isinstance(v, (int, float)) or isinstance(v, bool):
                    raise CaseError(f"{kind}[{i}].{f}: must be a number")
                kwargs[f] = v
            obj = _NATIVE_TYPES[kind](**kwargs)
            if obj.id in out:
                raise CaseError(f"{kind}[{i}].id: duplicate id {obj.id}")
            out[obj.id] = obj
        parts[kind] = out

    net = Network(name=str(doc.get("name", name)), base_mva=float(base),
                  buses=parts["buses"], lines=parts["lines"],
                  generators=parts["generators"], loads=parts["loads"],
                  shunts=parts["shunts"])
    _raise_on_hard_errors(net)
    return net


def emit_native(net: Network) -> str:
    """Serialize to the native JSON format. ``parse_native`` round-trips
    the result bit-exactly (floats are emitted with full precision)."""
    doc = {"name": net.name, "base_mva": net.base_mva}
    for kind, fields in _NATIVE_FIELDS.items():
        coll = getattr(net, kind)
        doc[kind] = [{f: getattr(obj, f) for f in fields} for obj in coll.values()]
    return json.dumps(doc, indent=2)


def _component_diagnostics(net: Network) -> list[Diagnostic]:
    out: list[Diagnostic] = []

    def bad(component, rule, message):
        out.append(Diagnostic(component, rule, message))

    if net.base_mva <= 0:
        bad("network", "base_mva_positive", f"base_mva={net.base_mva}")
    for b in net.buses.values():
        if not (0.0 < b.vmin <= b.vmax):
            bad(f"bus {b.id}", "voltage_band", f"vmin={b.vmin}, vmax={b.vmax}")
    for ln in net.lines.values():
        where = f"line {ln.id}"
        for end, bus in (("from_bus", ln.from_bus), ("to_bus", ln.to_bus)):
            if bus not in net.buses:
                bad(where, "bus_exists", f"{end}={bus} not in case")
        if ln.from_bus == ln.to_bus:
            bad(where, "distinct_endpoints", f"both ends at bus {ln.from_bus}")
        if ln.thermal < 0 or not math.isfinite(ln.thermal):
            bad(where, "rating_nonnegative", f"thermal={ln.thermal}")
        if ln.tap_mag2 <= 0:
            bad(where, "tap_nonzero", f"tap=({ln.tap_re}, {ln.tap_im})")
        if not (ln.ang_min <= ln.ang_max):
            bad(where, "angle_order", f"ang_min={ln.ang_min} > ang_max={ln.ang_max}")
        if not (-math.pi / 2 < ln.ang_min and ln.ang_max < math.pi / 2):
            bad(where, "angle_quarter_plane",
                f"limits ({ln.ang_min}, {ln.ang_max}) outside (-pi/2, pi/2)")
        for f in ("g_series", "b_series", "g_fr", "b_fr", "g_to", "b_to"):
            if not math.isfinite(getattr(ln, f)):
                bad(where, "finite_admittance", f"{f}={getattr(ln, f)}")
    for g in net.generators.values():
        where = f"generator {g.id}"
        if g.bus not in net.buses:
            bad(where, "bus_exists", f"bus={g.bus} not in case")
        if g.pmin > g.pmax:
            bad(where, "active_range", f"pmin={g.pmin} > pmax={g.pmax}")
        if g.qmin > g.qmax:
            bad(where, "reactive_range", f"qmin={g.qmin} > qmax={g.qmax}")
    for d in net.loads.values():
        where = f"load {d.id}"
        if d.bus not in net.buses:
            bad(where, "bus_exists", f"bus={d.bus} not in case")
        if d.pd < 0:
            bad(where, "demand_nonnegative", f"pd={d.pd}")
        if d.weight <= 0:
            bad(where, "weight_positive", f"weight={d.weight}")
    for s in net.shunts.values():
        if s.bus not in net.buses:
            bad(f"shunt {s.id}", "bus_exists", f"bus={s.bus} not in case")
    return out


def validate(net: Network) -> list[Diagnostic]:
    """Structural checks. Returns an empty list for a clean case; otherwise
    one diagnostic per violation, each naming the component and rule."""
    out = _component_diagnostics(net)

    # connectivity of the full line graph (advisory: islands in the raw
    # case usually indicate data entry problems)
    if net.buses:
        parent = {b: b for b in net.buses}

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for ln in net.lines.values():
            if ln.from_bus in parent and ln.to_bus in parent:
                parent[find(ln.from_bus)] = find(ln.to_bus)
        roots = {find(b) for b in net.buses}
        if len(roots) > 1:
            out.append(Diagnostic("network", "connected",
                                  f"{len(roots)} disconnected components"))
    if net.total_demand() <= 0:
        out.append(Diagnostic("network", "positive_demand", "no active-power load"))
    return out


def _raise_on_hard_errors(net: Network) -> None:
    hard = [d for d in _component_diagnostics(net)
            if d.rule in ("bus_exists", "voltage_band", "angle_order",
                          "tap_nonzero", "base_mva_positive")]
    if hard:
        raise CaseError("; ".join(str(d) for d in hard))


def bundled_case_names() -> list[str]:
    root = resources.files("opskit.cases")
    return sorted(p.name[:-2] for p in root.iterdir() if p.name.endswith(".m"))


def load_case(name_or_path: str | Path) -> Network:
    """Load a case by bundled name (``case14_ieee`` etc.) or file path.

    ``.m`` files go through the MATPOWER parser, ``.json`` through the
    native one.
    """
    path = Path(name_or_path)
    if not path.suffix:
        ref = resources.files("opskit.cases").joinpath(f"{name_or_path}.m")
        if not ref.is_file():
            raise CaseError(f"unknown bundled case {name_or_path!r}; "
                            f"available: {', '.join(bundled_case_names())}")
        return parse_matpower(ref.read_text(), name=str(name_or_path))
    if not path.exists():
        raise CaseError(f"no such case file: {path}")
    text = path.read_text()
    if path.suffix == ".json":
        return parse_native(text, name=path.stem)
    return parse_matpower(text, name=path.stem)
