"""Run configuration, binary field snapshots and CSV diagnostics.

Config files are INI documents (``configparser``) with the sections of
``SCHEMA``.  Parsing is strict: unknown sections or keys are errors, and every
problem found is reported at once.  ``format_config`` prints the canonical form,
with floats at 17 significant digits so that parse(format(parse(x))) == parse(x).

Snapshot layout (all little-endian)::

    magic     8 bytes  b"NSALPHA\\0"
    version   uint32
    N         uint32
    L         float64
    ncomp     uint32
    ordering  8 bytes  b"HALFLEX\\0"
    t         float64
    payload   ncomp * N * N * (N//2 + 1) pairs (re, im) of float64

The payload runs lexicographically over (component, k1, k2, k3) with k1, k2 in
FFT order (0, 1, ..., N/2 - 1, -N/2, ..., -1) and k3 in 0..N/2 (half spectrum).
"""

from __future__ import annotations

import configparser
import csv
import difflib
import math
import struct
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Mapping, Optional

import numpy as np

from .constants import ModelParams, turbulence_frequencies
from .evolution import SCHEMES, ForcingSpec, LedgerRow, StepConfig
from .experiments import DEFAULT_TOLERANCES, STUDY_KINDS, Scenario, StudySpec
from .filters import INDICATOR_KINDS, MOLLIFIER_KINDS, FilterProblem, IndicatorSpec, MollifierSpec
from .spectral import GridMismatchError, SolenoidalField, SpectralField, TorusGrid, sobolev_norm

FLOAT_FMT = "{:.17g}"


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.errors))


# ---------------------------------------------------------------- schema

def _pos(v):
    return None if v > 0 else "must be positive"


def _nonneg(v):
    return None if v >= 0 else "must be nonnegative"


def _even_n(v):
    return None if v >= 4 and v % 2 == 0 else "must be an even integer >= 4"


def _beta(v):
    return None if 0 < v <= 1 else "must lie in (0, 1]"


def _choice(options):
    def check(v):
        return None if v in options else f"must be one of {', '.join(options)}"
    return check


def _kappa(v):
    if v == "gr":
        return None
    return None if v >= 0 else "must be nonnegative or 'gr'"


def _parse_kappa(s: str):
    return "gr" if s.strip().lower() == "gr" else float(s)


def _parse_floats(s: str) -> tuple:
    return tuple(float(x) for x in s.replace(",", " ").split())


def _int(s: str) -> int:
    return int(s.strip())


@dataclass(frozen=True)
class _Key:
    parse: Callable[[str], Any]
    default: Any
    check: Optional[Callable[[Any], Optional[str]]] = None


SCHEMA: dict[str, dict[str, _Key]] = {
    "grid": {
        "L": _Key(float, 2 * math.pi, _pos),
        "N": _Key(_int, 16, _even_n),
    },
    "physics": {
        "nu": _Key(float, 0.1, _pos),
        "alpha": _Key(float, 0.5, _pos),
        "beta": _Key(float, 0.5, _beta),
        "indicator": _Key(str, "smooth_local", _choice(INDICATOR_KINDS)),
        "c": _Key(float, 1.0, _pos),
        "mollifier": _Key(str, "cutoff", _choice(MOLLIFIER_KINDS)),
        "kappa": _Key(_parse_kappa, 3.0, _kappa),
        "kappa0": _Key(float, 1.0, _pos),
    },
    "forcing": {
        "kind": _Key(str, "random", _choice(("random", "none"))),
        "seed": _Key(_int, 2),
        "energy": _Key(float, 1.0, _nonneg),
        "kmax": _Key(float, 2.5, _pos),
    },
    "initial": {
        "kind": _Key(str, "random", _choice(("random", "shear", "file"))),
        "seed": _Key(_int, 1),
        "energy": _Key(float, 1.0, _nonneg),
        "slope": _Key(float, -1.0),
        "kmax": _Key(float, 4.0, _pos),
        "mode": _Key(_int, 1, _pos),
        "path": _Key(str, ""),
    },
    "time": {
        "T": _Key(float, 0.5, _pos),
        "dt": _Key(float, 0.01, _pos),
        "scheme": _Key(str, "duhamel_picard", _choice(SCHEMES)),
        "picard_max_iter": _Key(_int, 30, _pos),
        "max_halvings": _Key(_int, 5, _nonneg),
    },
    "output": {
        "snapshot_interval": _Key(_int, 0, _nonneg),
        "snapshot_dir": _Key(str, "snapshots"),
        "ledger": _Key(str, "ledger.csv"),
    },
    "study": {
        "kind": _Key(str, "", _choice(("",) + STUDY_KINDS)),
        "params": _Key(_parse_floats, ()),
    },
}
# tolerance keys of every study kind may appear in [study]; only explicit ones are kept
_TOLERANCE_KEYS = sorted({k for tol in DEFAULT_TOLERANCES.values() for k in tol})


def _tol_parse(key):
    return _parse_floats if key == "T_fractions" else float


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return FLOAT_FMT.format(v)
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    return str(v)


# ---------------------------------------------------------------- config

@dataclass(frozen=True)
class RunConfig:
    grid: dict
    physics: dict
    forcing: dict
    initial: dict
    time: dict
    output: dict
    study: dict
    tolerances: dict = field(default_factory=dict)
    base_dir: str = field(default=".", compare=False)

    # -- builders for the numerical modules --
    def torus(self) -> TorusGrid:
        return TorusGrid(self.grid["L"], self.grid["N"])

    def indicator(self) -> IndicatorSpec:
        p = self.physics
        return IndicatorSpec(p["indicator"], beta=p["beta"], c=p["c"])

    def mollifier(self) -> MollifierSpec:
        p = self.physics
        return MollifierSpec("none") if p["mollifier"] == "none" else MollifierSpec("cutoff", p["kappa"])

    def filter_problem(self, grid: Optional[TorusGrid] = None) -> FilterProblem:
        return FilterProblem(self.physics["alpha"], self.indicator(), self.mollifier(), grid or self.torus())

    def step_config(self) -> StepConfig:
        t = self.time
        return StepConfig(dt=t["dt"], nu=self.physics["nu"], scheme=t["scheme"],
                          picard_max_iter=t["picard_max_iter"], max_halvings=t["max_halvings"])

    @property
    def steps(self) -> int:
        return int(round(self.time["T"] / self.time["dt"]))

    def scenario(self) -> Scenario:
        if self.initial["kind"] == "file":
            raise ConfigError(["[initial] kind = file is not supported by studies"])
        p, i, f, t = self.physics, self.initial, self.forcing, self.time
        return Scenario(
            N=self.grid["N"], L=self.grid["L"], nu=p["nu"], T=t["T"], dt=t["dt"], scheme=t["scheme"],
            picard_max_iter=t["picard_max_iter"], max_halvings=t["max_halvings"],
            initial=i["kind"], seed=i["seed"], energy=i["energy"], spectrum_slope=i["slope"], kmax=i["kmax"],
            shear_mode=i["mode"],
            forcing_seed=f["seed"], forcing_energy=f["energy"] if f["kind"] == "random" else 0.0,
            forcing_kmax=f["kmax"],
            alpha=p["alpha"], beta=p["beta"], indicator=p["indicator"], c=p["c"],
            kappa=None if p["mollifier"] == "none" else p["kappa"],
        )

    def study_spec(self, kind: Optional[str] = None) -> StudySpec:
        kind = kind or self.study["kind"]
        if not kind:
            raise ConfigError(["no study kind given"])
        return StudySpec(kind, self.study["params"], self.scenario(), dict(self.tolerances))

    def initial_field(self, grid: TorusGrid) -> SolenoidalField:
        if self.initial["kind"] == "file":
            u, _ = read_snapshot(Path(self.base_dir) / self.initial["path"], grid=grid)
            return u
        return self.scenario().initial_field(grid)

    def forcing_spec(self, grid: TorusGrid) -> ForcingSpec:
        if self.forcing["kind"] == "none":
            return ForcingSpec.none(grid)
        f = self.forcing
        sc = Scenario(N=grid.N, L=grid.L, forcing_seed=f["seed"], forcing_energy=f["energy"], forcing_kmax=f["kmax"])
        return sc.forcing(grid)

    def model_params(self, grid: Optional[TorusGrid] = None) -> ModelParams:
        """Inputs of the constant chain, evaluated on this configuration's data."""
        grid = grid or self.torus()
        p = self.physics
        mol = self.mollifier()
        if mol.kind == "none" or math.isinf(mol.kappa) or mol.kappa == 0:
            raise ConfigError(["constants need a finite positive cutoff kappa"])
        forcing = self.forcing_spec(grid)
        ind = self.indicator()
        return ModelParams(
            alpha=p["alpha"], beta=p["beta"], nu=p["nu"], L=self.grid["L"],
            phi_l2=mol.l2_norm(grid.L), phi_h1=mol.h1_norm(grid.L), c_a=ind.C_A, c_a_prime=ind.C_A_prime,
            f_hminus1=forcing.hminus1, u0_l2=sobolev_norm(self.initial_field(grid), 0), T=self.time["T"],
            f_l2=forcing.l2, kappa0=p["kappa0"],
        )


_SECTIONS = [f.name for f in fields(RunConfig) if f.name in SCHEMA]


def _suggest(word, options) -> str:
    close = difflib.get_close_matches(word, list(options), n=1)
    return f" (did you mean '{close[0]}'?)" if close else ""


def parse_config(text: str, overrides: Optional[Mapping[str, str]] = None, base_dir=None) -> RunConfig:
    """Parse and validate a config document; raises ConfigError listing every problem.

    ``overrides`` maps "section.key" to a raw string and wins over the document.
    """
    cp = configparser.ConfigParser(interpolation=None, default_section="__defaults__")
    cp.optionxform = str  # keys are case sensitive (N, L, T)
    errors = []
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError([f"syntax: {exc}"]) from None

    raw: dict[str, dict[str, str]] = {s: {} for s in SCHEMA}
    for sec in cp.sections():
        if sec not in SCHEMA:
            errors.append(f"unknown section [{sec}]{_suggest(sec, SCHEMA)}")
            continue
        raw[sec].update(cp[sec])
    for dotted, value in (overrides or {}).items():
        sec, _, key = dotted.partition(".")
        if sec not in SCHEMA:
            errors.append(f"unknown section in override {dotted!r}{_suggest(sec, SCHEMA)}")
            continue
        raw[sec][key] = str(value)

    values: dict[str, dict[str, Any]] = {}
    tolerances: dict[str, Any] = {}
    for sec, schema in SCHEMA.items():
        out = {}
        for key, text_value in raw[sec].items():
            if sec == "study" and key in _TOLERANCE_KEYS:
                try:
                    tolerances[key] = _tol_parse(key)(text_value)
                except ValueError:
                    errors.append(f"[study] {key} = {text_value!r}: not a number")
                continue
            if key not in schema:
                known = list(schema) + (_TOLERANCE_KEYS if sec == "study" else [])
                errors.append(f"unknown key {sec}.{key}{_suggest(key, known)}")
                continue
            try:
                out[key] = schema[key].parse(text_value)
            except ValueError:
                errors.append(f"[{sec}] {key} = {text_value!r}: cannot parse")
        for key, spec in schema.items():
            if key not in out:
                if key in raw[sec]:
                    continue  # already reported
                out[key] = spec.default
            elif spec.check is not None:
                msg = spec.check(out[key])
                if msg:
                    errors.append(f"[{sec}] {key} = {_fmt(out[key])}: {msg}")
        values[sec] = out

    errors += _cross_checks(values, tolerances, base_dir)
    if errors:
        raise ConfigError(errors)
    _resolve_kappa(values)
    return RunConfig(**values, tolerances=tolerances, base_dir=str(base_dir or "."))


def _cross_checks(v, tolerances, base_dir) -> list:
    errors = []
    p, t = v["physics"], v["time"]
    if p.get("indicator") == "smooth_local" and p.get("mollifier") == "none":
        errors.append("[physics] the smooth_local indicator needs mollifier = cutoff")
    if p.get("indicator") in ("smooth_local", "global_energy") and p.get("beta") == 1.0:
        errors.append("[physics] beta = 1 requires indicator = constant_one")
    T, dt = t.get("T"), t.get("dt")
    if isinstance(T, float) and isinstance(dt, float) and T > 0 and dt > 0:
        n = round(T / dt)
        if n < 1 or abs(n * dt - T) > 1e-9 * T:
            errors.append(f"[time] T = {_fmt(T)} is not a whole number of steps of dt = {_fmt(dt)}")
    i = v["initial"]
    if i.get("kind") == "file":
        path = Path(base_dir or ".") / i.get("path", "")
        if not i.get("path") or not path.is_file():
            errors.append(f"[initial] path {str(path)!r} does not exist")
    s = v["study"]
    kind = s.get("kind")
    if kind:
        bad = set(tolerances) - set(DEFAULT_TOLERANCES[kind])
        if bad:
            errors.append(f"[study] tolerance keys {sorted(bad)} do not apply to {kind}")
        try:
            StudySpec(kind, s.get("params", ()), Scenario(), {k: x for k, x in tolerances.items() if k not in bad})
        except ValueError as exc:
            errors.append(f"[study] {exc}")
    elif tolerances or s.get("params"):
        errors.append("[study] params or tolerances given without a study kind")
    g = v["grid"]
    if isinstance(g.get("N"), int) and g["N"] >= 4 and g["N"] % 2 == 0 and g.get("L", 0) > 0:
        try:
            TorusGrid(g["L"], g["N"])
        except ValueError as exc:
            errors.append(f"[grid] {exc}")
    return errors


def _resolve_kappa(v) -> None:
    """kappa = gr becomes Gr * kappa0 with Gr from the configured forcing amplitude."""
    p = v["physics"]
    if p["kappa"] != "gr":
        return
    f = v["forcing"]
    L = v["grid"]["L"]
    f_l2 = math.sqrt(f["energy"] * L**3) if f["kind"] == "random" else 0.0
    p["kappa"] = turbulence_frequencies(f_l2, L, p["nu"], p["kappa0"])[2]


def format_config(cfg: RunConfig) -> str:
    lines = []
    for sec in _SECTIONS:
        lines.append(f"[{sec}]")
        for key in SCHEMA[sec]:
            lines.append(f"{key} = {_fmt(getattr(cfg, sec)[key])}")
        if sec == "study":
            for key in sorted(cfg.tolerances):
                lines.append(f"{key} = {_fmt(cfg.tolerances[key])}")
        lines.append("")
    return "\n".join(lines)


def load_config(path, overrides: Optional[Mapping[str, str]] = None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([f"cannot read {path}: {exc}"]) from None
    return parse_config(text, overrides, base_dir=path.parent)


# ---------------------------------------------------------------- snapshots

SNAPSHOT_MAGIC = b"NSALPHA\0"
SNAPSHOT_VERSION = 1
ORDERING_TAG = b"HALFLEX\0"
_HEADER = struct.Struct("<8sIIdI8sd")


class SnapshotError(ValueError):
    pass


def snapshot_header(grid: TorusGrid, t: float, components: int = 3) -> bytes:
    return _HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, grid.N, grid.L, components, ORDERING_TAG, t)


def write_snapshot(field_: SpectralField, t: float, path) -> None:
    c = np.ascontiguousarray(field_.coeffs, dtype="<c16")
    ncomp = c.shape[0] if c.ndim == 4 else 1
    Path(path).write_bytes(snapshot_header(field_.grid, float(t), ncomp) + c.tobytes(order="C"))


def read_snapshot(path, grid: Optional[TorusGrid] = None):
    """Returns (field, t); three-component snapshots come back as SolenoidalField."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise SnapshotError(f"{path}: truncated header")
    magic, version, N, L, ncomp, tag, t = _HEADER.unpack_from(raw)
    if magic != SNAPSHOT_MAGIC:
        raise SnapshotError(f"{path}: bad magic {magic!r}; not a version-{SNAPSHOT_VERSION} snapshot")
    if version > SNAPSHOT_VERSION:
        raise SnapshotError(f"{path}: snapshot version {version} is newer than supported {SNAPSHOT_VERSION}")
    if version < 1:
        raise SnapshotError(f"{path}: invalid snapshot version {version}")
    if tag != ORDERING_TAG:
        raise SnapshotError(f"{path}: unknown mode ordering {tag!r} (version {version})")
    snap_grid = TorusGrid(L, N)
    if grid is not None and (grid.N != N or grid.L != L):
        raise GridMismatchError(f"{path}: snapshot grid (L={L!r}, N={N}) differs from (L={grid.L!r}, N={grid.N})")
    shape = ((ncomp,) if ncomp > 1 else ()) + snap_grid.spectral_shape
    expected = int(np.prod(shape)) * 16
    body = raw[_HEADER.size:]
    if len(body) != expected:
        kind = "truncated" if len(body) < expected else "oversized"
        raise SnapshotError(f"{path}: {kind} payload ({len(body)} bytes, expected {expected})")
    c = np.frombuffer(body, dtype="<c16").reshape(shape).astype(complex)
    cls = SolenoidalField if ncomp == 3 else SpectralField
    return cls(snap_grid, c), t


# ---------------------------------------------------------------- ledger CSV

LEDGER_COLUMNS = tuple(f.name for f in fields(LedgerRow))


def write_ledger_csv(ledger, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(LEDGER_COLUMNS) + "\n")
        for r in ledger.rows:
            fh.write(",".join(FLOAT_FMT.format(getattr(r, c)) for c in LEDGER_COLUMNS) + "\n")


def read_ledger_csv(path) -> list:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != LEDGER_COLUMNS:
            raise ValueError(f"{path}: ledger header {header} != {list(LEDGER_COLUMNS)}")
        return [LedgerRow(*map(float, row)) for row in reader if row]
