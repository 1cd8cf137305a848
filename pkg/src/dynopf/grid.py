"""Power-network data model, case-file parsing, and load perturbation.

Case files are JSON documents with top-level keys ``base_mva``, ``buses``,
``lines`` and ``generators``:

* ``buses[]``: ``id``, ``vmin``, ``vmax``, ``pd``, ``qd``, ``ref`` (boolean)
* ``lines[]``: ``from``, ``to``, ``g``, ``b``, ``angle_limit_rad``, ``smax``
* ``generators[]``: ``bus``, ``pmin``, ``pmax``, ``qmin``, ``qmax``,
  ``c2``, ``c1``, ``c0``, ``xd_prime``, ``inertia``, ``damping``

All powers are per-unit on ``base_mva``, voltages per-unit, angles in
radians, costs in $/pu^2, $/pu, $.  ``(g, b)`` is the series admittance of
the line (no shunt or charging elements, no transformer taps).  Bus ids may
be arbitrary integers; parsing normalizes them to contiguous 0-based
indices ordered by ascending id.

Two cases ship with the package: ``wscc9`` and ``ieee57``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

__all__ = [
    "Bus",
    "Line",
    "Generator",
    "Network",
    "LoadProfile",
    "CaseSyntaxError",
    "CaseSemanticError",
    "parse_case",
    "serialize_network",
    "network_hash",
    "load_bundled_case",
    "bundled_case_names",
    "perturb_loads",
]


class CaseSyntaxError(ValueError):
    """Malformed case text; carries the 1-based line/column of the defect."""

    def __init__(self, msg: str, line: int, column: int):
        super().__init__(f"{msg} (line {line}, column {column})")
        self.line = line
        self.column = column


class CaseSemanticError(ValueError):
    """Well-formed case text that violates a network invariant."""


@dataclass(frozen=True)
class Bus:
    id: int
    v_min: float
    v_max: float
    p_load: float
    q_load: float


@dataclass(frozen=True)
class Line:
    from_bus: int
    to_bus: int
    g: float
    b: float
    angle_limit: float
    flow_limit: float


@dataclass(frozen=True)
class Generator:
    bus: int
    p_min: float
    p_max: float
    q_min: float
    q_max: float
    c2: float
    c1: float
    c0: float
    x_d_prime: float
    inertia: float
    damping: float


@dataclass(frozen=True)
class Network:
    """Validated, index-normalized power network.

    Immutable after construction.  Vectorized views of the bus/line/generator
    tables are exposed as read-only numpy arrays (built once in
    ``__post_init__``) so numerical code never iterates over records.
    """

    base_power: float
    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    generators: tuple[Generator, ...]
    reference_bus: int

    def __post_init__(self):
        bus = self.buses
        ln = self.lines
        gen = self.generators
        arr = {
            "v_min": [b.v_min for b in bus],
            "v_max": [b.v_max for b in bus],
            "p_load": [b.p_load for b in bus],
            "q_load": [b.q_load for b in bus],
            "line_from": [l.from_bus for l in ln],
            "line_to": [l.to_bus for l in ln],
            "line_g": [l.g for l in ln],
            "line_b": [l.b for l in ln],
            "angle_limit": [l.angle_limit for l in ln],
            "flow_limit": [l.flow_limit for l in ln],
            "gen_bus": [g.bus for g in gen],
            "p_min": [g.p_min for g in gen],
            "p_max": [g.p_max for g in gen],
            "q_min": [g.q_min for g in gen],
            "q_max": [g.q_max for g in gen],
            "c2": [g.c2 for g in gen],
            "c1": [g.c1 for g in gen],
            "c0": [g.c0 for g in gen],
            "x_d_prime": [g.x_d_prime for g in gen],
            "inertia": [g.inertia for g in gen],
            "damping": [g.damping for g in gen],
        }
        for name, values in arr.items():
            dtype = np.intp if name in ("line_from", "line_to", "gen_bus") else np.float64
            a = np.asarray(values, dtype=dtype)
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def n_line(self) -> int:
        return len(self.lines)

    @property
    def n_gen(self) -> int:
        return len(self.generators)


@dataclass(frozen=True)
class LoadProfile:
    """One realized per-bus demand vector (per-unit)."""

    p_d: np.ndarray
    q_d: np.ndarray

    def __post_init__(self):
        p = np.array(self.p_d, dtype=np.float64)
        q = np.array(self.q_d, dtype=np.float64)
        if p.shape != q.shape or p.ndim != 1:
            raise ValueError("p_d and q_d must be 1-d vectors of equal length")
        p.setflags(write=False)
        q.setflags(write=False)
        object.__setattr__(self, "p_d", p)
        object.__setattr__(self, "q_d", q)

    @property
    def n_bus(self) -> int:
        return self.p_d.shape[0]


def _require(cond: bool, msg: str):
    if not cond:
        raise CaseSemanticError(msg)


def _num(obj, table: str, row: int, key: str) -> float:
    try:
        v = obj[key]
    except (KeyError, TypeError):
        raise CaseSemanticError(f"{table}[{row}] missing required key '{key}'") from None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise CaseSemanticError(f"{table}[{row}].{key} must be a number, got {v!r}")
    return float(v)


def parse_case(text: str) -> Network:
    """Parse and validate a case document into a normalized :class:`Network`.

    Raises :class:`CaseSyntaxError` on malformed JSON (with position) and
    :class:`CaseSemanticError` naming the violated invariant otherwise.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise CaseSyntaxError(e.msg, e.lineno, e.colno) from None

    _require(isinstance(doc, dict), "top level must be an object")
    for key in ("base_mva", "buses", "lines", "generators"):
        _require(key in doc, f"missing top-level key '{key}'")
    base = doc["base_mva"]
    _require(isinstance(base, (int, float)) and not isinstance(base, bool) and base > 0,
             "base_mva must be a positive number")
    _require(isinstance(doc["buses"], list) and doc["buses"], "buses must be a non-empty array")
    _require(isinstance(doc["lines"], list), "lines must be an array")
    _require(isinstance(doc["generators"], list), "generators must be an array")

    raw_ids = []
    ref_ids = []
    for i, b in enumerate(doc["buses"]):
        bid = b.get("id") if isinstance(b, dict) else None
        _require(isinstance(bid, int) and not isinstance(bid, bool),
                 f"buses[{i}] must have an integer 'id'")
        raw_ids.append(bid)
        if b.get("ref", False):
            ref_ids.append(bid)
    _require(len(set(raw_ids)) == len(raw_ids), "bus ids must be unique")
    _require(len(ref_ids) == 1,
             f"exactly one reference bus required, found {len(ref_ids)}")

    order = sorted(range(len(raw_ids)), key=lambda i: raw_ids[i])
    index_of = {raw_ids[i]: pos for pos, i in enumerate(order)}

    buses = []
    for pos, i in enumerate(order):
        b = doc["buses"][i]
        vmin = _num(b, "buses", i, "vmin")
        vmax = _num(b, "buses", i, "vmax")
        _require(0 < vmin <= vmax,
                 f"bus {raw_ids[i]}: need 0 < vmin <= vmax, got [{vmin}, {vmax}]")
        buses.append(Bus(pos, vmin, vmax, _num(b, "buses", i, "pd"), _num(b, "buses", i, "qd")))

    lines = []
    for i, l in enumerate(doc["lines"]):
        for end in ("from", "to"):
            bid = l.get(end) if isinstance(l, dict) else None
            _require(isinstance(bid, int) and bid in index_of,
                     f"lines[{i}].{end} references unknown bus {bid!r}")
        g = _num(l, "lines", i, "g")
        b = _num(l, "lines", i, "b")
        _require((g, b) != (0.0, 0.0), f"lines[{i}] has zero admittance")
        ang = _num(l, "lines", i, "angle_limit_rad")
        smax = _num(l, "lines", i, "smax")
        _require(ang > 0, f"lines[{i}].angle_limit_rad must be positive")
        _require(smax > 0, f"lines[{i}].smax must be positive")
        _require(l["from"] != l["to"], f"lines[{i}] connects bus {l['from']} to itself")
        lines.append(Line(index_of[l["from"]], index_of[l["to"]], g, b, ang, smax))

    gens = []
    for i, g in enumerate(doc["generators"]):
        bid = g.get("bus") if isinstance(g, dict) else None
        _require(isinstance(bid, int) and bid in index_of,
                 f"generators[{i}].bus references unknown bus {bid!r}")
        rec = {k: _num(g, "generators", i, k)
               for k in ("pmin", "pmax", "qmin", "qmax", "c2", "c1", "c0",
                         "xd_prime", "inertia", "damping")}
        _require(rec["pmin"] <= rec["pmax"], f"generators[{i}]: pmin > pmax")
        _require(rec["qmin"] <= rec["qmax"], f"generators[{i}]: qmin > qmax")
        _require(rec["c2"] >= 0, f"generators[{i}]: c2 must be nonnegative")
        _require(rec["xd_prime"] > 0, f"generators[{i}]: xd_prime must be positive")
        _require(rec["inertia"] > 0, f"generators[{i}]: inertia must be positive")
        _require(rec["damping"] >= 0, f"generators[{i}]: damping must be nonnegative")
        gens.append(Generator(index_of[bid], rec["pmin"], rec["pmax"], rec["qmin"],
                              rec["qmax"], rec["c2"], rec["c1"], rec["c0"],
                              rec["xd_prime"], rec["inertia"], rec["damping"]))

    return Network(
        base_power=float(base),
        buses=tuple(buses),
        lines=tuple(lines),
        generators=tuple(gens),
        reference_bus=index_of[ref_ids[0]],
    )


def serialize_network(net: Network) -> str:
    """Canonical case text for a network; ``parse_case`` round-trips it."""
    doc = {
        "base_mva": net.base_power,
        "buses": [
            {"id": b.id, "vmin": b.v_min, "vmax": b.v_max, "pd": b.p_load,
             "qd": b.q_load, "ref": b.id == net.reference_bus}
            for b in net.buses
        ],
        "lines": [
            {"from": l.from_bus, "to": l.to_bus, "g": l.g, "b": l.b,
             "angle_limit_rad": l.angle_limit, "smax": l.flow_limit}
            for l in net.lines
        ],
        "generators": [
            {"bus": g.bus, "pmin": g.p_min, "pmax": g.p_max, "qmin": g.q_min,
             "qmax": g.q_max, "c2": g.c2, "c1": g.c1, "c0": g.c0,
             "xd_prime": g.x_d_prime, "inertia": g.inertia, "damping": g.damping}
            for g in net.generators
        ],
    }
    return json.dumps(doc, indent=1, sort_keys=True)


def network_hash(net: Network) -> str:
    """Stable content hash of a network (sha256 of its canonical text)."""
    return hashlib.sha256(serialize_network(net).encode()).hexdigest()


def bundled_case_names() -> list[str]:
    files = resources.files("dynopf").joinpath("cases")
    return sorted(p.name[:-5] for p in files.iterdir() if p.name.endswith(".json"))


def load_bundled_case(name: str) -> Network:
    """Load one of the cases shipped with the package (``wscc9``, ``ieee57``)."""
    path = resources.files("dynopf").joinpath("cases", f"{name}.json")
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise KeyError(f"no bundled case named {name!r}; "
                       f"available: {bundled_case_names()}") from None
    return parse_case(text)


def perturb_loads(net: Network, fraction: float, seed: int) -> LoadProfile:
    """Scale every bus demand by an independent uniform factor.

    Each bus draws one multiplier ``u ~ U[1 - fraction, 1 + fraction]``
    applied to both its active and reactive demand, so the complex demand is
    scaled without rotating its power factor.  Deterministic per seed.
    """
    if not 0 <= fraction < 1:
        raise ValueError(f"fraction must be in [0, 1), got {fraction}")
    rng = np.random.default_rng(seed)
    u = rng.uniform(1.0 - fraction, 1.0 + fraction, net.n_bus)
    return LoadProfile(p_d=net.p_load * u, q_d=net.q_load * u)
