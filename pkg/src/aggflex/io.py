"""File formats: fleet, polytope, network, and unit-commitment case JSON,
plus the trace and report CSVs.

Writers are canonical (sorted keys, two-space indent, trailing newline), so
write -> read -> write is byte-identical.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .core import DerEnvelope, FleetSpec, Polytope, StructuralError, TimeGrid

SCHEMA_VERSIONS = {
    "fleet": 1,
    "polytope": 1,
    "network": 1,
    "scuc-case": 1,
    "scuc-solution": 1,
    "relative-size": 1,
    "trace-csv": 1,
}


class FormatError(ValueError):
    """Malformed artifact file: names the offending field."""


def _dump(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _load(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc


def _require(obj: dict, key: str, path) -> object:
    if key not in obj:
        raise FormatError(f"{path}: missing field '{key}'")
    return obj[key]


# ---------------------------------------------------------------- fleet ----

def write_fleet(fleet: FleetSpec, path) -> None:
    doc = {
        "delta_t_hours": fleet.grid.delta_t,
        "horizon": fleet.grid.T,
        "ders": [
            {
                "p_min": list(env.p_lo),
                "p_max": list(env.p_hi),
                "e_min": list(env.e_lo),
                "e_max": list(env.e_hi),
            }
            for env in fleet.ders
        ],
    }
    _dump(doc, path)


def read_fleet(path) -> FleetSpec:
    doc = _load(path)
    grid = TimeGrid(int(_require(doc, "horizon", path)),
                    float(_require(doc, "delta_t_hours", path)))
    ders = []
    for i, d in enumerate(_require(doc, "ders", path)):
        try:
            ders.append(DerEnvelope.build(d["p_min"], d["p_max"], d["e_min"], d["e_max"], grid))
        except KeyError as exc:
            raise FormatError(f"{path}: ders[{i}] missing field {exc}") from exc
        except (StructuralError, ValueError) as exc:
            raise FormatError(f"{path}: ders[{i}]: {exc}") from exc
    if not ders:
        raise FormatError(f"{path}: fleet has no DERs")
    return FleetSpec(grid, tuple(ders))


# ------------------------------------------------------------- polytope ----

def write_polytope(poly: Polytope, path) -> None:
    if poly.b is None:
        raise ValueError("cannot serialize a polytope without bounds")
    rows = []
    for a, bound in zip(poly.A, poly.b):
        nz = np.nonzero(a)[0]
        vals = a[nz]
        if nz.size == 0 or not (np.all(vals == 1.0) or np.all(vals == -1.0)):
            raise ValueError("serialized rows must be signed binary directions")
        rows.append({
            "sign": int(vals[0]),
            "support": [int(t) + 1 for t in nz],
            "bound": float(bound),
        })
    _dump({"prototype": poly.tag, "T": poly.T, "rows": rows}, path)


def read_polytope(path) -> Polytope:
    doc = _load(path)
    T = int(_require(doc, "T", path))
    rows = _require(doc, "rows", path)
    A = np.zeros((len(rows), T))
    b = np.zeros(len(rows))
    for i, row in enumerate(rows):
        try:
            sign = int(row["sign"])
            support = row["support"]
            b[i] = float(row["bound"])
        except KeyError as exc:
            raise FormatError(f"{path}: rows[{i}] missing field {exc}") from exc
        if sign not in (1, -1):
            raise FormatError(f"{path}: rows[{i}].sign must be +1 or -1")
        for t in support:
            if not 1 <= int(t) <= T:
                raise FormatError(f"{path}: rows[{i}] slot index {t} outside 1..{T}")
            A[i, int(t) - 1] = float(sign)
    return Polytope(A, b, tag=str(_require(doc, "prototype", path)))


# -------------------------------------------------------------- network ----

def write_network(net, path, aggregator_files: dict[int, str] | None = None) -> None:
    """Serialize a DistributionNetwork (imported lazily to avoid a cycle)."""
    doc = {
        "mva_base": net.mva_base,
        "nodes": list(range(net.n_nodes)),
        "lines": [
            {"from": int(i), "to": int(j), "r_pu": float(r), "x_pu": float(x)}
            for (i, j, r, x) in net.lines
        ],
        "v_min_pu": float(np.sqrt(net.v_min_sq)),
        "v_max_pu": float(np.sqrt(net.v_max_sq)),
        "fixed_load": {
            str(i): {"p": list(net.p_fix[i]), "q": list(net.q_fix[i])}
            for i in range(net.n_nodes)
            if np.any(net.p_fix[i]) or np.any(net.q_fix[i])
        },
        "tan_gamma": {str(i): float(net.tan_gamma[i]) for i in range(net.n_nodes)
                      if net.tan_gamma[i] != 0.0},
        "aggregators": {str(i): f for i, f in (aggregator_files or {}).items()},
    }
    _dump(doc, path)


def read_network(path, T: int):
    from .network import DistributionNetwork

    doc = _load(path)
    nodes = _require(doc, "nodes", path)
    n = len(nodes)
    lines = [(int(l["from"]), int(l["to"]), float(l["r_pu"]), float(l["x_pu"]))
             for l in _require(doc, "lines", path)]
    p_fix = np.zeros((n, T))
    q_fix = np.zeros((n, T))
    for key, load in doc.get("fixed_load", {}).items():
        i = int(key)
        p = np.asarray(load["p"], dtype=float)
        q = np.asarray(load["q"], dtype=float)
        if p.shape != (T,) or q.shape != (T,):
            raise FormatError(f"{path}: fixed_load[{key}] profiles must have length {T}")
        p_fix[i] = p
        q_fix[i] = q
    tan_gamma = np.zeros(n)
    for key, v in doc.get("tan_gamma", {}).items():
        tan_gamma[int(key)] = float(v)
    v_min = float(_require(doc, "v_min_pu", path))
    v_max = float(_require(doc, "v_max_pu", path))
    net = DistributionNetwork(
        n_nodes=n, lines=tuple(lines), v_min_sq=v_min ** 2, v_max_sq=v_max ** 2,
        p_fix=p_fix, q_fix=q_fix, tan_gamma=tan_gamma,
        mva_base=float(doc.get("mva_base", 1.0)))
    agg_files = {int(k): str(v) for k, v in doc.get("aggregators", {}).items()}
    return net, agg_files


# ------------------------------------------------------------ scuc case ----

def write_scuc_case(inst, path, polytope_files: list[str]) -> None:
    from .scuc import ScucInstance  # noqa: F401  (type reference only)

    if len(polytope_files) != len(inst.adns):
        raise ValueError("one polytope file reference per ADN is required")
    doc = {
        "T": inst.T,
        "n_buses": inst.n_buses,
        "lines": [
            {"from": int(i), "to": int(j), "x_pu": float(x), "cap_mw": float(cap)}
            for (i, j, x, cap) in inst.lines
        ],
        "generators": [
            {
                "bus": g.bus, "a": g.a, "b": g.b, "c": g.c,
                "startup_cost": g.startup_cost, "shutdown_cost": g.shutdown_cost,
                "reserve_up_cost": g.reserve_up_cost, "reserve_down_cost": g.reserve_down_cost,
                "p_min_mw": g.p_min, "p_max_mw": g.p_max,
                "ramp_up_mw": g.ramp_up, "ramp_down_mw": g.ramp_down,
                "ramp_startup_mw": g.ramp_startup, "ramp_shutdown_mw": g.ramp_shutdown,
                "min_up": g.min_up, "min_down": g.min_down,
            }
            for g in inst.generators
        ],
        "wind": [
            {"bus": w.bus, "caps_mw": [list(row) for row in w.caps]}
            for w in inst.wind
        ],
        "scenario_probs": list(inst.scenario_probs),
        "fixed_load_mw": {str(i): list(inst.fixed_load[i]) for i in range(inst.n_buses)
                          if np.any(inst.fixed_load[i])},
        "adns": [
            {"bus": int(bus), "polytope": pf, "power_scale": float(scale)}
            for (bus, _poly, scale), pf in zip(inst.adns, polytope_files)
        ],
    }
    _dump(doc, path)


def read_scuc_case(path, polytope_dir=None):
    from .scuc import Generator, ScucInstance, WindFarm

    doc = _load(path)
    T = int(_require(doc, "T", path))
    gens = tuple(
        Generator(
            bus=int(g["bus"]), a=float(g["a"]), b=float(g["b"]), c=float(g["c"]),
            startup_cost=float(g["startup_cost"]), shutdown_cost=float(g["shutdown_cost"]),
            reserve_up_cost=float(g["reserve_up_cost"]),
            reserve_down_cost=float(g["reserve_down_cost"]),
            p_min=float(g["p_min_mw"]), p_max=float(g["p_max_mw"]),
            ramp_up=float(g["ramp_up_mw"]), ramp_down=float(g["ramp_down_mw"]),
            ramp_startup=float(g["ramp_startup_mw"]), ramp_shutdown=float(g["ramp_shutdown_mw"]),
            min_up=int(g["min_up"]), min_down=int(g["min_down"]))
        for g in _require(doc, "generators", path)
    )
    wind = tuple(
        WindFarm(bus=int(w["bus"]), caps=np.asarray(w["caps_mw"], dtype=float))
        for w in doc.get("wind", [])
    )
    n_buses = int(_require(doc, "n_buses", path))
    fixed = np.zeros((n_buses, T))
    for key, prof in doc.get("fixed_load_mw", {}).items():
        fixed[int(key)] = np.asarray(prof, dtype=float)
    adns = []
    base = Path(polytope_dir) if polytope_dir is not None else Path(path).parent
    for a in doc.get("adns", []):
        poly = read_polytope(base / a["polytope"])
        adns.append((int(a["bus"]), poly, float(a.get("power_scale", 1.0))))
    lines = tuple((int(l["from"]), int(l["to"]), float(l["x_pu"]), float(l["cap_mw"]))
                  for l in _require(doc, "lines", path))
    return ScucInstance(
        T=T, n_buses=n_buses, lines=lines, generators=gens, wind=wind,
        scenario_probs=tuple(float(p) for p in _require(doc, "scenario_probs", path)),
        fixed_load=fixed, adns=tuple(adns))


# ------------------------------------------------------------------ csv ----

def write_trace_csv(trace, path) -> None:
    lines = ["k,sense,gap,rows_modified"]
    for rec in trace:
        lines.append(f"{rec.k},{rec.sense},{rec.gap!r},{rec.rows_modified}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_relative_size_report(report, json_path, csv_path=None) -> None:
    doc = {
        "seed": report.seed,
        "n_directions": report.n,
        "geometric_mean": report.geometric_mean,
        "floored": report.floored,
        "resampled": report.resampled,
        "directions": [
            {
                "direction": [int(v) for v in s.direction],
                "width_apx": s.width_apx,
                "width_ext": s.width_ext,
                "ratio": s.ratio,
            }
            for s in report.samples
        ],
    }
    _dump(doc, json_path)
    if csv_path is not None:
        lines = ["direction,width_apx,width_ext,ratio"]
        for s in report.samples:
            key = "".join(str(int(v)) for v in s.direction)
            lines.append(f"{key},{s.width_apx!r},{s.width_ext!r},{s.ratio!r}")
        Path(csv_path).write_text("\n".join(lines) + "\n")


def write_scuc_solution(sol, path) -> None:
    doc = {
        "objective": sol.objective,
        "cost_breakdown": dict(sorted(sol.cost_breakdown.items())),
        "commitment": [[int(v) for v in row] for row in sol.u],
        "startup": [[int(v) for v in row] for row in sol.y],
        "shutdown": [[int(v) for v in row] for row in sol.z],
        "dispatch_mw": _nested(sol.p_gen),
        "wind_mw": _nested(sol.p_wind),
        "adn_mw": _nested(sol.p_adn),
        "reserve_up_mw": _nested(sol.r_up),
        "reserve_down_mw": _nested(sol.r_dn),
        "mip_gap": sol.mip_gap,
    }
    _dump(doc, path)


def write_cost_csv(sol, path) -> None:
    lines = ["component,cost"]
    for key in sorted(sol.cost_breakdown):
        lines.append(f"{key},{sol.cost_breakdown[key]!r}")
    lines.append(f"total,{sol.objective!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def _nested(arr) -> list:
    if arr is None:
        return []
    return np.asarray(arr).tolist()
