"""Experiment configuration, dispatch and run records.

A config is one YAML document:

    kind: converge
    seed: 0
    theta: 0.5
    h_values: [0.25, 0.125, 0.0625]
    grid: {N_tan: 16, N_thick: 9}

Every key is checked against ``SCHEMA`` before any compute; unknown keys and
out-of-range values raise ConfigError naming the offending path. Defaults are
filled in so the stored record is self-contained.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .errors import ConfigError
from .rates import RateFit, fit_rate  # noqa: F401  (re-exported)

KINDS = ("simulate3d", "plate2d", "converge", "korn", "energy-audit", "material-check")

# (default, type, validator or None)
_POS = lambda x: x > 0
_UNIT = lambda x: 0 < x <= 1
_NONNEG = lambda x: x >= 0

SCHEMA = {
    "kind": (None, str, lambda k: k in KINDS),
    "seed": (0, int, _NONNEG),
    "output": ("runs", str, None),
    "threads": (1, int, _POS),
    "theta": (0.5, float, lambda t: 0 <= t <= 1),
    "T": (1.0, float, _POS),
    "cfl": (0.5, float, lambda c: 0 < c <= 1),
    "n_smooth": (math.inf, float, _NONNEG),
    "h": (0.25, float, _UNIT),
    "h_values": ([0.25, 0.125, 0.0625, 0.03125, 0.015625], list, lambda v: len(v) > 0 and all(0 < x <= 1 for x in v)),
    "material": {
        "d": (2, int, lambda d: d in (2, 3)),
        "normalization": (0.5, float, _POS),
        "epsilon_domain": (0.1, float, lambda e: 0 < e < 1),
    },
    "grid": {
        "L": (math.pi, float, _POS),
        "N_tan": (16, int, lambda n: n >= 4 and n & (n - 1) == 0),
        "N_thick": (9, int, lambda n: n >= 3),
    },
    "forcing": {
        "type": ("default", str, lambda s: s in ("default", "zero", "cosine")),
        "amplitude": (1.0, float, None),
        "wavenumber": (1, int, _POS),
        "frequency": (1.0, float, None),
    },
    "initial": {
        "type": ("plate", str, lambda s: s in ("plate", "low_frequency", "zero")),
        "amplitude": (0.1, float, _NONNEG),
        "max_wavenumber": (3, int, _POS),
    },
    "samples": (100, int, _POS),
    "snapshots": (False, bool, None),
    "richardson": (True, bool, None),
    "tolerances": {
        "slope_window": (0.3, float, _POS),
        "drift": (1e-6, float, _POS),
        "drift_order": (1.9, float, None),
        "korn_ratio": (2.0, float, _POS),
        "korn_grid": (0.02, float, _POS),
        "material": (1e-12, float, _POS),
        "d3_band": (1.5, float, _POS),
        "plate_energy": (1e-12, float, _POS),
    },
}


# per-kind defaults layered under the user's document
KIND_DEFAULTS = {
    "energy-audit": {
        "h": 0.125,
        "grid": {"N_thick": 17},
        "initial": {"type": "low_frequency", "amplitude": 1e-3, "max_wavenumber": 2},
        "forcing": {"type": "zero"},
    },
    "korn": {"grid": {"N_tan": 64, "N_thick": 33}, "h_values": [1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125]},
}


def _merge(base: dict, top: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in top.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _coerce(path, value, typ):
    if typ is float:
        if isinstance(value, bool) or not isinstance(value, (int, float, str)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        try:
            return float(value)
        except ValueError:
            raise ConfigError(f"{path}: expected a number, got {value!r}") from None
    if typ is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if typ is list:
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list, got {value!r}")
        return [_coerce(f"{path}[{i}]", v, float) for i, v in enumerate(value)]
    if not isinstance(value, typ):
        raise ConfigError(f"{path}: expected {typ.__name__}, got {value!r}")
    return value


def _validate(raw: dict, schema: dict, prefix: str = "") -> dict:
    if not isinstance(raw, dict):
        raise ConfigError(f"{prefix or 'config'}: expected a mapping")
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigError(f"{prefix + '.' if prefix else ''}{unknown[0]}: unknown key")
    out = {}
    for key, entry in schema.items():
        path = f"{prefix}.{key}" if prefix else key
        if isinstance(entry, dict):
            out[key] = _validate(raw.get(key, {}) or {}, entry, path)
            continue
        default, typ, check = entry
        if key not in raw:
            if default is None:
                raise ConfigError(f"{path}: required")
            out[key] = copy.deepcopy(default)
            continue
        val = _coerce(path, raw[key], typ)
        if check is not None and not check(val):
            raise ConfigError(f"{path}: value {raw[key]!r} violates its constraint")
        out[key] = val
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    data: dict

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if isinstance(raw, dict) and raw.get("kind") in KIND_DEFAULTS:
            raw = _merge(KIND_DEFAULTS[raw["kind"]], raw)
        data = _validate(raw, SCHEMA)
        if data["kind"] in ("converge",) and not 0 < data["theta"] <= 1:
            raise ConfigError(f"theta: value {data['theta']!r} violates 0 < theta <= 1 required by converge")
        return cls(data)

    @classmethod
    def from_yaml(cls, text: str) -> "ExperimentConfig":
        try:
            raw = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"config is not valid YAML: {exc}") from None
        return cls.from_dict(raw or {})

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_yaml(text)

    def __getitem__(self, key):
        return self.data[key]

    @property
    def kind(self) -> str:
        return self.data["kind"]

    def canonical(self) -> str:
        return json.dumps(self.data, sort_keys=True, default=_json_default)

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(type(x).__name__)


def _clean(x):
    """JSON-safe copy: inf becomes the string 'inf', numpy scalars become floats."""
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.floating, np.integer)):
        x = x.item()
    if isinstance(x, float) and not math.isfinite(x):
        return "inf" if x > 0 else ("-inf" if x < 0 else "nan")
    return x


def _restore(x):
    if isinstance(x, dict):
        return {k: _restore(v) for k, v in x.items()}
    if isinstance(x, list):
        return [_restore(v) for v in x]
    if x in ("inf", "-inf", "nan"):
        return float(x)
    return x


@dataclass
class RunRecord:
    config: dict
    config_sha256: str
    version: str
    wall_time: float
    metrics: dict
    tolerances: dict
    passed: bool
    notes: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(_clean(asdict(self)), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunRecord":
        return cls(**_restore(json.loads(text)))

    def __eq__(self, other):
        if not isinstance(other, RunRecord):
            return NotImplemented
        return self.to_json() == other.to_json()


# ---------------------------------------------------------------------------
# runners


def _material(cfg):
    from .material import MaterialModel

    m = cfg["material"]
    return MaterialModel(m["d"], m["normalization"], m["epsilon_domain"])


def _grid(cfg, h=None):
    from .fields import GridSpec

    g = cfg["grid"]
    return GridSpec(cfg["material"]["d"], g["L"], g["N_tan"], g["N_thick"], cfg["h"] if h is None else h)


def _forcing(cfg):
    from .solver3d import ForcingSpec

    f = cfg["forcing"]
    if f["type"] == "zero" or f["amplitude"] == 0:
        return ForcingSpec.zero()
    k, a, w = f["wavenumber"], f["amplitude"], f["frequency"]
    if f["type"] == "default":
        k, w = 1, 1.0
    return ForcingSpec.separable(lambda *xs: a * np.cos(k * xs[0]), lambda t: np.cos(w * t),
                                 lambda t: -w * np.sin(w * t))


def run_material_check(cfg, out: Path) -> tuple[dict, dict, list]:
    from . import material as mat

    rng = np.random.default_rng(cfg["seed"])
    tol = cfg["tolerances"]
    model = _material(cfg)
    d = model.d
    eps = model.epsilon_domain
    G = rng.standard_normal((200, d, d))
    # sizes bounded away from 0 so the relative error is not dominated by round-off in W ~ |G|^2
    G *= (eps * rng.uniform(0.5, 0.9, (200, 1, 1))) / mat.frob(G)[:, None, None]
    W = mat.energy(model, G)
    Q = np.stack([mat.random_rotation(rng, d) for _ in range(200)])
    Gq = Q @ (np.eye(d) + G) - np.eye(d)
    Wq = mat.energy(model, Gq, check=False)
    frame = float(np.max(np.abs(Wq - W) / np.maximum(np.abs(W), 1e-300)))
    zero = np.zeros((d, d))
    dw0 = float(np.max(np.abs(mat.first_derivative(model, zero))))
    H = rng.standard_normal((200, d, d))
    d2 = float(np.max(np.abs(mat.second_derivative_apply(model, np.zeros_like(H), H)
                             - 2 * model.normalization * mat.sym(H))))
    # Legendre-Hadamard: min over unit a, b of D^2W(0)[a x b]:(a x b)
    a = rng.standard_normal((2000, d))
    b = rng.standard_normal((2000, d))
    a /= np.linalg.norm(a, axis=1, keepdims=True)
    b /= np.linalg.norm(b, axis=1, keepdims=True)
    b[0] = np.linalg.svd(a[:1])[2][-1]  # one orthogonal pair attains the minimum
    ab = a[:, :, None] * b[:, None, :]
    lh = float(np.min(np.sum(mat.second_derivative_apply(model, np.zeros_like(ab), ab) * ab, axis=(1, 2))))
    form = mat.third_derivative_form(model)
    d3 = {}
    for h in (1.0, 0.5, 0.25, 0.125):
        d3[h] = mat.scaled_multilinear_norm(form, d, 3, h, seed=cfg["seed"]).value / h
    band = max(d3.values()) / min(d3.values())
    metrics = dict(frame_invariance=frame, dw_at_zero=dw0, d2w_sym_error=d2, legendre_hadamard=lh,
                   d3_scaled_over_h={str(k): v for k, v in d3.items()}, d3_band=band)
    checks = dict(
        frame_invariance=frame <= tol["material"],
        dw_at_zero=dw0 == 0.0,
        d2w_sym=d2 <= tol["material"],
        legendre_hadamard=lh >= model.normalization - tol["material"],
        d3_band=band <= tol["d3_band"],
    )
    _write_json(out / "material_check.json", metrics)
    return metrics, checks, []


def run_energy_audit(cfg, out: Path):
    from . import solver3d
    from .fields import Field

    model = _material(cfg)
    grid = _grid(cfg)
    rng = np.random.default_rng(cfg["seed"])
    ini = cfg["initial"]
    u = solver3d.low_frequency_data(grid, model, rng, amplitude=ini["amplitude"], max_wavenumber=ini["max_wavenumber"])
    state = solver3d.SimState(Field(grid, u), Field(grid, np.zeros_like(u)), 0.0, cfg["theta"])
    dt = solver3d.stable_dt(grid, model, cfg["cfl"])
    drifts = []
    rows = None
    for k in range(3):
        tr = solver3d.simulate(state, model, None, cfg["n_smooth"], cfg["T"], dt=dt / 2**k, n_samples=cfg["samples"],
                               csv_path=out / f"ledger_dt{k}.csv")
        drifts.append(tr.max_relative_drift)
        rows = rows or tr.rows
    orders = [math.log2(drifts[i] / drifts[i + 1]) for i in range(2) if drifts[i + 1] > 0]
    order = min(orders) if orders else float("inf")
    metrics = dict(dt=dt, drift=drifts[0], drift_halved=drifts[1:], drift_order=order)
    checks = dict(drift=drifts[0] <= cfg["tolerances"]["drift"], drift_order=order >= cfg["tolerances"]["drift_order"])
    return metrics, checks, []


def run_simulate3d(cfg, out: Path):
    from . import asymptotics, plate2d, solver3d
    from .fields import Field

    model = _material(cfg)
    grid = _grid(cfg)
    g = _forcing(cfg)
    ini = cfg["initial"]
    theta = cfg["theta"]
    rng = np.random.default_rng(cfg["seed"])
    if ini["type"] == "plate":
        amp = ini["amplitude"]
        plate = plate2d.plate_solve(plate2d.PlateGrid.from_grid(grid), lambda *xs: amp * np.cos(xs[0]), None, g, cfg["T"])
        tg = asymptotics.prepared_data_targets(plate, grid.h, max(theta, 1e-12), grid)
        f0 = solver3d.body_force(grid, g.load(grid, 0.0), 1.0) if not g.is_zero else None
        ft0 = solver3d.body_force(grid, g.load_rate(grid, 0.0), 1.0) if not g.is_zero else None
        prep = solver3d.prepare_initial_data(model, tg.u2, tg.u3, f0, ft0, grid.h, theta, cfg["n_smooth"])
        u0, u1 = prep.u0, prep.u1
    elif ini["type"] == "low_frequency":
        u = solver3d.low_frequency_data(grid, model, rng, ini["amplitude"], ini["max_wavenumber"])
        u0, u1 = Field(grid, u), Field.zeros(grid)
    else:
        u0, u1 = Field.zeros(grid), Field.zeros(grid)
    state = solver3d.SimState(u0, u1, 0.0, theta)
    tr = solver3d.simulate(state, model, g, cfg["n_smooth"], cfg["T"], cfl=cfg["cfl"], n_samples=cfg["samples"],
                           csv_path=out / "ledger.csv", snapshot_dir=(out / "snapshots") if cfg["snapshots"] else None)
    last = tr.rows[-1]
    metrics = dict(steps=tr.steps, dt=tr.dt, final_time=last["t"], kinetic=last["kinetic"], elastic=last["elastic"],
                   work=last["work"], drift=last["drift"])
    return metrics, dict(completed=True), []


def run_plate2d(cfg, out: Path):
    from . import plate2d

    grid = plate2d.PlateGrid(cfg["material"]["d"] - 1, cfg["grid"]["L"], cfg["grid"]["N_tan"])
    g = _forcing(cfg)
    amp = cfg["initial"]["amplitude"]
    times = np.linspace(0.0, cfg["T"], cfg["samples"] + 1)
    tr = plate2d.plate_solve(grid, lambda *xs: amp * np.cos(xs[0]), None, g, cfg["T"], times)
    energies = [plate2d.plate_energy(s) for s in tr.states]
    with open(out / "plate_energy.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "energy", "v_max"])
        for s, e in zip(tr.states, energies):
            w.writerow([repr(s.t), repr(e), repr(float(np.max(np.abs(s.v))))])
    if cfg["snapshots"]:
        (out / "snapshots").mkdir(exist_ok=True)
        for i, s in enumerate(tr.states):
            plate2d.write_plate_snapshot(out / "snapshots" / f"v_{i:05d}.bin", s)
    metrics = dict(samples=len(tr.states), energy_initial=energies[0], energy_final=energies[-1])
    checks = {}
    if g.is_zero:
        rel = max(abs(e - energies[0]) for e in energies) / max(energies[0], 1e-300)
        metrics["energy_relative_variation"] = rel
        checks["energy_conserved"] = rel <= cfg["tolerances"]["plate_energy"]
    return metrics, checks, []


def run_converge(cfg, out: Path):
    from .asymptotics import ConvergenceConfig, convergence_study

    m = cfg["material"]
    cc = ConvergenceConfig(
        d=m["d"], L=cfg["grid"]["L"], theta=cfg["theta"], h_values=tuple(cfg["h_values"]), T=cfg["T"],
        N_tan=cfg["grid"]["N_tan"], N_thick=cfg["grid"]["N_thick"], cfl=cfg["cfl"], n_samples=cfg["samples"],
        v0_amplitude=cfg["initial"]["amplitude"], forced=cfg["forcing"]["type"] != "zero",
        n_smooth=cfg["n_smooth"], epsilon_domain=m["epsilon_domain"], richardson=cfg["richardson"],
        target_window=cfg["tolerances"]["slope_window"],
    )
    rep = convergence_study(cc, out)
    notes = []
    if rep.floor_detected:
        notes.append("error floor detected at the finest h")
    metrics = dict(slope=rep.slope, target=rep.target, gap_slope=rep.gap_slope, residual_slope=rep.residual_slope,
                   errors={str(lg["h"]): lg["error"] for lg in rep.legs}, richardson=rep.richardson,
                   degenerate=rep.degenerate)
    checks = dict(slope=rep.passed or rep.degenerate)
    if rep.richardson is not None:
        checks["discretization_budget"] = rep.richardson["within_budget"]
    return metrics, checks, notes


def run_korn(cfg, out: Path):
    from .fields import GridSpec
    from .korn import korn_constant, korn_sweep

    g = cfg["grid"]
    d = cfg["material"]["d"]
    res = korn_sweep(cfg["h_values"], d, g["N_tan"], g["N_thick"], g["L"], csv_path=out / "korn.csv")
    C = [r.constant for r in res]
    finest = min(cfg["h_values"])
    fine = korn_constant(GridSpec(d, g["L"], 2 * g["N_tan"], 2 * (g["N_thick"] - 1) + 1, finest), keep_vector=False)
    coarse = [r for r in res if r.h == finest][0]
    change = abs(fine.constant / coarse.constant - 1)
    metrics = dict(constants={str(r.h): r.constant for r in res}, ratio=max(C) / min(C), grid_change=change)
    checks = dict(uniform=max(C) / min(C) <= cfg["tolerances"]["korn_ratio"],
                  grid_converged=change <= cfg["tolerances"]["korn_grid"])
    return metrics, checks, []


RUNNERS = {
    "material-check": run_material_check,
    "energy-audit": run_energy_audit,
    "simulate3d": run_simulate3d,
    "plate2d": run_plate2d,
    "converge": run_converge,
    "korn": run_korn,
}


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True, default=_json_default))


def run(config: ExperimentConfig, out_dir=None) -> RunRecord:
    """Dispatch to the owning module, write artifacts and a run record."""
    out = Path(out_dir if out_dir is not None else config["output"])
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    metrics, checks, notes = RUNNERS[config.kind](config.data, out)
    record = RunRecord(
        config=config.data,
        config_sha256=config.sha256,
        version=__version__,
        wall_time=time.perf_counter() - t0,
        metrics=metrics | {"checks": checks},
        tolerances=config["tolerances"],
        passed=all(checks.values()),
        notes=notes,
    )
    (out / "record.json").write_text(record.to_json())
    return record
