"""Run configuration: a flat ``key = value`` file plus command-line overrides.

Grammar, one setting per line::

    # comment
    window = [40.0, 40.0, 85.0]
    input_csv = "data/pattern.csv"
    seed = 7
    radii_candidates = ["beta", "beta,dvol", "beta,nof,dvol"]

Values are Python literals (quoted strings, ints, floats, lists, tuples,
``True``/``False``/``None``).  Unknown keys are errors.
"""

from __future__ import annotations

import ast
import hashlib
import itertools
import json
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from .errors import ConfigError
from .gibbs_points import DEFAULT_DELTA_VALUES, DEFAULT_LATTICE
from .radii_model import DEFAULT_NODES

_EXTRA_TERMS = ("vol2", "nof", "surf", "dvol")


def default_radii_candidates() -> tuple:
    """Every term set of dimension 2, 3 or 4 built from beta, vol2, nof, surf and dvol."""
    out = ["beta"]
    out += [f"beta,{t}" for t in _EXTRA_TERMS]
    out += ["beta," + ",".join(c) for c in itertools.combinations(_EXTRA_TERMS, 2)]
    for q in (2, 3, 4):
        out += [",".join(c) for c in itertools.combinations(_EXTRA_TERMS, q)]
    return tuple(out)


@dataclass(frozen=True)
class RunConfig:
    window: tuple = (40.0, 40.0, 85.0)
    input_csv: str = None
    r_max: float = 6.0
    output_dir: str = "out"
    seed: int = 1
    # pseudolikelihood quadrature
    pl_lattice: tuple = DEFAULT_LATTICE
    radii_nodes: int = DEFAULT_NODES
    # point model
    d_max: int = 4
    delta_values: tuple = DEFAULT_DELTA_VALUES
    bdm_steps: int = 200_000
    bdm_burn_in: int = 100_000
    move_sd: float = 0.5
    # radii model
    radii_candidates: tuple = default_radii_candidates()
    mwg_burn_in: int = 500
    proposal_sd: float = 0.2
    initial_radius: float = 3.0
    # envelopes and summaries
    n_sims_points: int = 1999
    n_sims_joint: int = 499
    alpha: float = 0.05
    grid_points: int = 128
    f_lattice: int = 32
    density_points: int = 128
    scale_blocks: str = None
    slice_z: tuple = ()

    def __post_init__(self):
        try:
            object.__setattr__(self, "window", tuple(float(x) for x in self.window))
            object.__setattr__(self, "pl_lattice", tuple(int(x) for x in self.pl_lattice))
            object.__setattr__(self, "delta_values", tuple(float(x) for x in self.delta_values))
            object.__setattr__(self, "radii_candidates", tuple(str(x) for x in self.radii_candidates))
            object.__setattr__(self, "slice_z", tuple(float(x) for x in self.slice_z))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"malformed setting: {exc}") from None
        self.validate()

    def validate(self) -> None:
        if len(self.window) != 3 or any(not x > 0 for x in self.window):
            raise ConfigError(f"window needs three positive sides, got {self.window}")
        if len(self.pl_lattice) != 3:
            raise ConfigError("pl_lattice needs three node counts")
        positive = ["r_max", "radii_nodes", "d_max", "bdm_steps", "move_sd", "proposal_sd", "n_sims_points",
                    "n_sims_joint", "grid_points", "f_lattice", "density_points", "initial_radius"]
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if any(n <= 0 for n in self.pl_lattice) or any(x <= 0 for x in self.delta_values):
            raise ConfigError("lattice node counts and delta values must be positive")
        for name in ("bdm_burn_in", "mwg_burn_in"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.initial_radius > self.r_max:
            raise ConfigError("initial_radius exceeds r_max")
        if self.scale_blocks not in (None, "studentize"):
            raise ConfigError("scale_blocks must be None or 'studentize'")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed must be a nonnegative integer")

    def with_overrides(self, **kw) -> "RunConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        unknown = set(kw) - {f.name for f in fields(self)}
        if unknown:
            raise ConfigError(f"unknown settings: {sorted(unknown)}")
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        """Digest of every setting that can change results; the output location is excluded."""
        d = self.to_dict()
        d.pop("output_dir")
        blob = json.dumps(d, sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def parse_config_text(text: str) -> dict:
    known = {f.name for f in fields(RunConfig)}
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            out[key] = ast.literal_eval(value)
        except (ValueError, SyntaxError):
            raise ConfigError(f"line {lineno}: cannot parse value {value!r} (quote strings)") from None
    return out


def load_config(path=None, **overrides) -> RunConfig:
    base = {}
    if path is not None:
        try:
            with open(path) as fh:
                base = parse_config_text(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
    try:
        cfg = RunConfig(**base)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return cfg.with_overrides(**overrides)


def derive_seed(seed: int, *keys: int) -> int:
    """Independent 63-bit seed for a sub-stream (model order, replicate index, ...)."""
    ss = np.random.SeedSequence([int(seed), *[int(k) for k in keys]])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
