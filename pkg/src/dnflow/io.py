"""Run configuration (TOML) and the self-describing binary trajectory format.

Trajectory file layout::

    b"DNF1" | uint32 LE header length | JSON header | float64 LE payload | sha256 digest

The payload holds the N + 1 snapshots in row-major node order, shape
(N + 1, *cells, m).  The digest covers every preceding byte.
"""
from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib
import tomli_w

from .errors import ConfigError, ParameterWindowError, TrajectoryFormatError
from .grid import BoxDomain, Trajectory
from .potentials import make_F, make_psi, normalize_matrix, verify_bounds
from .regularity import DecayParams, thresholds
from .stepper import SolverConfig

MAGIC = b"DNF1"
FORMAT_VERSION = 1
OUTPUT_ENV = "DNFLOW_OUTPUT_DIR"
PROFILES = ("zero", "sine", "bump", "random_smooth")


# ---------------------------------------------------------------------------
# configuration


@dataclass
class DomainSpec:
    n: int = 1
    lo: list = field(default_factory=lambda: [0.0])
    hi: list = field(default_factory=lambda: [1.0])
    cells: list = field(default_factory=lambda: [99])

    def build(self) -> BoxDomain:
        return BoxDomain(self.n, tuple(self.lo), tuple(self.hi), tuple(self.cells))


@dataclass
class TimeSpec:
    T: float = 0.1
    N: int = 100


@dataclass
class PotentialSpec:
    family: str = "quadratic"
    params: dict = field(default_factory=dict)


@dataclass
class InitialSpec:
    profile: str = "sine"
    params: dict = field(default_factory=dict)


@dataclass
class DecaySpec:
    L: float = 10.0
    vartheta: float = 0.25
    epsilon: float = 0.1
    rho: float = 0.5
    gamma: float = 0.75


@dataclass
class AnalyticsSpec:
    radius: float = 0.1
    radii: list = field(default_factory=lambda: [0.2, 0.1, 0.05, 0.025, 0.0125])
    h_list: list = field(default_factory=list)
    scales: int = 3


@dataclass
class RunConfig:
    domain: DomainSpec = field(default_factory=DomainSpec)
    time: TimeSpec = field(default_factory=TimeSpec)
    m: int = 1
    psi: PotentialSpec = field(default_factory=PotentialSpec)
    F: PotentialSpec = field(default_factory=PotentialSpec)
    solver: SolverConfig = field(default_factory=SolverConfig)
    initial: InitialSpec = field(default_factory=InitialSpec)
    decay: DecaySpec = field(default_factory=DecaySpec)
    analytics: AnalyticsSpec = field(default_factory=AnalyticsSpec)
    seed: int = 0
    output_dir: str = "out"
    verify_potentials: bool = True

    def to_dict(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return tomli_w.dumps(self.to_dict())

    # built objects -------------------------------------------------------

    def build_domain(self) -> BoxDomain:
        return self.domain.build()

    def build_potentials(self):
        psi = make_psi(self.psi.family, self.m, **self.psi.params)
        F = normalize_matrix(make_F(self.F.family, self.m, self.domain.n, **self.F.params))
        return psi, F

    def decay_params(self, alpha: float = 1.0) -> DecayParams:
        d = self.decay
        return thresholds(d.epsilon, d.rho, d.vartheta, d.L, d.gamma, self.domain.n, alpha)

    def resolve_output_dir(self, override: str | None = None, environ=None) -> Path:
        import os
        environ = os.environ if environ is None else environ
        if override:
            return Path(override)
        if environ.get(OUTPUT_ENV):
            return Path(environ[OUTPUT_ENV])
        return Path(self.output_dir)


_SECTIONS = {"domain": DomainSpec, "time": TimeSpec, "psi": PotentialSpec, "F": PotentialSpec,
             "solver": SolverConfig, "initial": InitialSpec, "decay": DecaySpec,
             "analytics": AnalyticsSpec}
_SCALARS = {"m": int, "seed": int, "output_dir": str, "verify_potentials": bool}


def _coerce(value, like, path):
    if isinstance(like, bool):
        if not isinstance(value, bool):
            raise ConfigError("expected a boolean", path)
        return value
    if isinstance(like, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError("expected an integer", path)
        return value
    if isinstance(like, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError("expected a number", path)
        return float(value)
    if isinstance(like, str):
        if not isinstance(value, str):
            raise ConfigError("expected a string", path)
        return value
    if isinstance(like, list):
        if not isinstance(value, list):
            raise ConfigError("expected an array", path)
        return value
    if isinstance(like, dict):
        if not isinstance(value, dict):
            raise ConfigError("expected a table", path)
        return value
    return value


def _section(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError("expected a table", path)
    defaults = cls()
    known = set(asdict(defaults))
    extra = set(data) - known
    if extra:
        raise ConfigError("unknown key", f"{path}.{sorted(extra)[0]}")
    kwargs = {k: _coerce(v, getattr(defaults, k), f"{path}.{k}") for k, v in data.items()}
    try:
        return cls(**{**asdict(defaults), **kwargs})
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc), path)


def config_from_dict(data: dict) -> RunConfig:
    extra = set(data) - set(_SECTIONS) - set(_SCALARS)
    if extra:
        raise ConfigError("unknown key", sorted(extra)[0])
    kwargs = {}
    for key, cls in _SECTIONS.items():
        if key in data:
            kwargs[key] = _section(cls, data[key], key)
    for key, typ in _SCALARS.items():
        if key in data:
            kwargs[key] = _coerce(data[key], typ(), key)
    cfg = RunConfig(**kwargs)
    validate_config(cfg)
    return cfg


def load_config(path) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError("file not found", str(path))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed TOML: {exc}", str(path))
    return config_from_dict(data)


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(cfg.dumps())


def validate_config(cfg: RunConfig) -> None:
    """Check every parameter window before any computation runs."""
    d = cfg.domain
    if d.n not in (1, 2):
        raise ConfigError("only n = 1 or 2 is supported", "domain.n")
    for key in ("lo", "hi", "cells"):
        if len(getattr(d, key)) != d.n:
            raise ConfigError(f"needs {d.n} entries", f"domain.{key}")
    try:
        d.build()
    except ValueError as exc:
        raise ConfigError(str(exc), "domain")
    if not cfg.time.T > 0:
        raise ConfigError("must be positive", "time.T")
    if cfg.time.N < 1:
        raise ConfigError("must be >= 1", "time.N")
    if cfg.m < 1:
        raise ConfigError("must be >= 1", "m")
    for key, spec in (("psi", cfg.psi), ("F", cfg.F)):
        try:
            pot = (make_psi(spec.family, cfg.m, **spec.params) if key == "psi"
                   else make_F(spec.family, cfg.m, d.n, **spec.params))
        except ConfigError as exc:
            raise ConfigError(str(exc), f"{key}.family")
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc), f"{key}.params")
        if cfg.verify_potentials:
            report = verify_bounds(pot, sample_count=200, seed=cfg.seed)
            if not report.passed:
                raise ConfigError("declared convexity bounds fail verification:\n" + report.summary(), key)
    if cfg.initial.profile not in PROFILES:
        raise ConfigError(f"unknown profile; choose from {list(PROFILES)}", "initial.profile")
    try:
        initial_datum(cfg)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), "initial.params")
    try:
        cfg.decay_params()
    except ParameterWindowError as exc:
        raise ConfigError(str(exc), "decay")
    a = cfg.analytics
    if not a.radius > 0:
        raise ConfigError("must be positive", "analytics.radius")
    if any(r <= 0 for r in a.radii):
        raise ConfigError("radii must be positive", "analytics.radii")
    if a.scales < 1:
        raise ConfigError("must be >= 1", "analytics.scales")


# ---------------------------------------------------------------------------
# initial data


def initial_datum(cfg: RunConfig) -> np.ndarray:
    """Sample the named initial profile on the interior nodes, shape (*cells, m)."""
    dom = cfg.build_domain()
    m = cfg.m
    p = dict(cfg.initial.params)
    X = dom.node_coords()
    lo, hi = np.asarray(dom.lo), np.asarray(dom.hi)
    Y = (X - lo) / (hi - lo)               # unit-cube coordinates
    amp = np.broadcast_to(np.asarray(p.pop("amplitude", 1.0), dtype=float), (m,))
    kind = cfg.initial.profile
    if kind == "zero":
        base = np.zeros(dom.cells)
    elif kind == "sine":
        mode = int(p.pop("mode", 1))
        base = np.prod(np.sin(mode * np.pi * Y), axis=-1)
    elif kind == "bump":
        centre = np.broadcast_to(np.asarray(p.pop("center", 0.5), dtype=float), (dom.n,))
        radius = float(p.pop("radius", 0.3))
        rho2 = np.sum(((Y - centre) / radius) ** 2, axis=-1)
        with np.errstate(divide="ignore", over="ignore"):
            base = np.where(rho2 < 1.0, np.exp(1.0 - 1.0 / np.maximum(1.0 - rho2, 1e-300)), 0.0)
    elif kind == "random_smooth":
        modes = int(p.pop("modes", 4))
        rng = np.random.default_rng(int(p.pop("seed", cfg.seed)))
        out = np.zeros(dom.cells + (m,))
        for idx in np.ndindex(*([modes] * dom.n)):
            k = np.asarray(idx) + 1
            coef = rng.normal(size=m) / float(np.sum(k * k))
            out += np.prod(np.sin(np.pi * k * Y), axis=-1)[..., None] * coef
        base = None
    else:
        raise ValueError(f"unknown profile {kind!r}")
    if p:
        raise ValueError(f"unused initial parameters {sorted(p)}")
    if base is not None:
        out = base[..., None] * np.ones(m)
    return out * amp


# ---------------------------------------------------------------------------
# trajectory files


def _header(traj: Trajectory) -> dict:
    dom = traj.domain
    return {
        "version": FORMAT_VERSION,
        "n": dom.n,
        "m": traj.m,
        "cells": list(dom.cells),
        "lo": list(dom.lo),
        "hi": list(dom.hi),
        "T": traj.T,
        "N": traj.N,
        "tau": traj.tau,
        "psi": traj.psi_meta,
        "F": traj.F_meta,
        "tol": traj.tol,
    }


def encode_trajectory(traj: Trajectory) -> bytes:
    header = json.dumps(_header(traj), sort_keys=True, separators=(",", ":")).encode()
    payload = np.ascontiguousarray(traj.snapshots, dtype="<f8").tobytes()
    body = MAGIC + struct.pack("<I", len(header)) + header + payload
    return body + hashlib.sha256(body).digest()


def write_trajectory(path, traj: Trajectory) -> str:
    """Write the file and return its hex SHA-256."""
    blob = encode_trajectory(traj)
    Path(path).write_bytes(blob)
    return hashlib.sha256(blob).hexdigest()


def decode_trajectory(blob: bytes) -> Trajectory:
    if len(blob) < 8 + 32 or blob[:4] != MAGIC:
        raise TrajectoryFormatError("not a trajectory file (bad magic or truncated)")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise TrajectoryFormatError("checksum mismatch")
    (hlen,) = struct.unpack("<I", body[4:8])
    if 8 + hlen > len(body):
        raise TrajectoryFormatError("header length exceeds file size")
    try:
        h = json.loads(body[8:8 + hlen])
    except ValueError as exc:
        raise TrajectoryFormatError(f"unreadable header: {exc}")
    if h.get("version") != FORMAT_VERSION:
        raise TrajectoryFormatError(f"unsupported version {h.get('version')}")
    try:
        shape = (int(h["N"]) + 1,) + tuple(int(c) for c in h["cells"]) + (int(h["m"]),)
        dom = BoxDomain(int(h["n"]), tuple(h["lo"]), tuple(h["hi"]), tuple(h["cells"]))
        tau = float(h["tau"])
    except (KeyError, TypeError, ValueError) as exc:
        raise TrajectoryFormatError(f"invalid header: {exc}")
    payload = body[8 + hlen:]
    if len(payload) != 8 * math.prod(shape):
        raise TrajectoryFormatError("payload size does not match the header")
    snaps = np.frombuffer(payload, dtype="<f8").reshape(shape).astype(float)
    return Trajectory(dom, shape[-1], tau, snaps, h["psi"], h["F"], float(h["tol"]))


def read_trajectory(path) -> Trajectory:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise TrajectoryFormatError(f"cannot read {path}: {exc}")
    return decode_trajectory(blob)


def write_step_reports(path, reports) -> None:
    with open(path, "w") as fh:
        for rep in reports:
            fh.write(json.dumps(rep.as_dict(), sort_keys=True) + "\n")
