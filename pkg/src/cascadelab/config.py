"""Line-oriented key=value configuration with [section] headers.

Chosen for diff-friendliness and zero-dependency parsing. Grammar:

    # comment                blank lines ignored
    [section]                section header
    key = value              string values; '#' starts a trailing comment

Scale-valued keys accept either absolute numbers or grid units like "8h"
(8 grid spacings). Every output file carries the sha256 hash of the
canonicalized config so reports from different configurations are never
merged silently.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field as dc_field


class ConfigError(ValueError):
    """Config parse or validation failure; exit code 2 at the CLI."""


def parse_config(text: str) -> dict:
    """Parse into {section: {key: value-string}} with line diagnostics."""
    sections: dict = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"line {lineno}: malformed section header {raw!r}")
            current = line[1:-1].strip()
            if not current:
                raise ConfigError(f"line {lineno}: empty section name")
            sections.setdefault(current, {})
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        if current is None:
            raise ConfigError(f"line {lineno}: key=value before any [section]")
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        sections[current][key] = value.strip()
    return sections


def canonical_text(sections: dict) -> str:
    out = []
    for sec in sorted(sections):
        out.append(f"[{sec}]")
        for key in sorted(sections[sec]):
            out.append(f"{key}={sections[sec][key]}")
    return "\n".join(out) + "\n"


def config_hash(sections: dict) -> str:
    return hashlib.sha256(canonical_text(sections).encode()).hexdigest()[:16]


def _get(sections, section, key, default=None, required=False):
    try:
        return sections[section][key]
    except KeyError:
        if required:
            raise ConfigError(f"missing required key [{section}] {key}") from None
        return default


def _coerce(section, key, raw, kind, grid_h=None):
    try:
        if kind is bool:
            lowered = raw.lower()
            if lowered in ("true", "1", "yes", "on"):
                return True
            if lowered in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is float and grid_h is not None and raw.endswith("h"):
            return float(raw[:-1]) * grid_h
        return kind(raw)
    except (TypeError, ValueError):
        raise ConfigError(
            f"[{section}] {key}: cannot parse {raw!r} as {kind.__name__}"
        ) from None


def get_typed(sections, section, key, kind, default=None, required=False, grid_h=None):
    raw = _get(sections, section, key, required=required)
    if raw is None:
        return default
    return _coerce(section, key, raw, kind, grid_h=grid_h)


def get_scale_list(sections, section, key, grid_h, default=None):
    raw = _get(sections, section, key)
    if raw is None:
        return default
    out = []
    for tok in raw.split(","):
        tok = tok.strip()
        if not tok:
            continue
        out.append(_coerce(section, key, tok, float, grid_h=grid_h))
    if not out:
        raise ConfigError(f"[{section}] {key}: empty list")
    return out


@dataclass
class RunParams:
    dim: int
    n: int
    nu: float
    dt: float
    n_steps: int
    seed: int = 0
    ic: str = "zero"  # zero | taylor_green | shear | random | single_mode
    ic_energy: float = 0.5
    ic_k_peak: float = 4.0
    ic_amplitude: float = 1.0
    forcing_kind: str = "none"
    k_f: float = 0.0
    amplitude_law: str = "fixed_input_rate"
    epsilon_in: float = 0.0
    amplitude: float = 0.0
    alpha: float = 0.0
    mix: float = 0.25
    shell_halfwidth: float | None = None
    friction_mu: float = 0.0
    friction_kmax: float = 2.0
    snapshot_every: int = 0
    deterministic: bool = True
    threads: int = 1
    band_limit: float | None = None  # sharp initial-spectrum cutoff


@dataclass
class DisperseParams:
    ells: list
    r_factor: float = 3.0
    tau_min_factor: float = 4e-3
    n_lags: int = 5
    base_per_axis: int | None = None
    n_dirs: int | None = None
    n_radii: int = 12
    psi_profile: str = "bump"
    refine: int = 2
    n_releases: int = 8
    frozen: bool = False
    residual_threshold: float = 0.5
    ells_raw: list = dc_field(default_factory=list)


def run_params_from(sections: dict) -> RunParams:
    dim = get_typed(sections, "run", "dim", int, required=True)
    n = get_typed(sections, "run", "n", int, required=True)
    p = RunParams(
        dim=dim,
        n=n,
        nu=get_typed(sections, "run", "nu", float, default=0.0),
        dt=get_typed(sections, "run", "dt", float, required=True),
        n_steps=get_typed(sections, "run", "n_steps", int, required=True),
        seed=get_typed(sections, "run", "seed", int, default=0),
        ic=get_typed(sections, "run", "ic", str, default="zero"),
        ic_energy=get_typed(sections, "run", "ic_energy", float, default=0.5),
        ic_k_peak=get_typed(sections, "run", "ic_k_peak", float, default=4.0),
        ic_amplitude=get_typed(sections, "run", "ic_amplitude", float, default=1.0),
        forcing_kind=get_typed(sections, "run", "forcing", str, default="none"),
        k_f=get_typed(sections, "run", "k_f", float, default=0.0),
        amplitude_law=get_typed(
            sections, "run", "amplitude_law", str, default="fixed_input_rate"
        ),
        epsilon_in=get_typed(sections, "run", "epsilon_in", float, default=0.0),
        amplitude=get_typed(sections, "run", "amplitude", float, default=0.0),
        alpha=get_typed(sections, "run", "alpha", float, default=0.0),
        mix=get_typed(sections, "run", "mix", float, default=0.25),
        shell_halfwidth=get_typed(sections, "run", "shell_halfwidth", float),
        friction_mu=get_typed(sections, "run", "friction_mu", float, default=0.0),
        friction_kmax=get_typed(sections, "run", "friction_kmax", float, default=2.0),
        snapshot_every=get_typed(sections, "run", "snapshot_every", int, default=0),
        deterministic=get_typed(sections, "run", "deterministic", bool, default=True),
        threads=get_typed(sections, "run", "threads", int, default=1),
        band_limit=get_typed(sections, "run", "band_limit", float),
    )
    if p.dim not in (2, 3):
        raise ConfigError("[run] dim must be 2 or 3")
    if p.n < 8 or p.n % 2:
        raise ConfigError("[run] n must be even and >= 8")
    if p.dt <= 0 or p.n_steps < 0:
        raise ConfigError("[run] dt must be > 0 and n_steps >= 0")
    return p


def disperse_params_from(sections: dict, grid_h: float) -> DisperseParams:
    ells = get_scale_list(sections, "disperse", "ells", grid_h)
    if ells is None:
        raise ConfigError("missing required key [disperse] ells")
    raw = sections.get("disperse", {}).get("ells", "")
    return DisperseParams(
        ells=sorted(ells),
        r_factor=get_typed(sections, "disperse", "r_factor", float, default=3.0),
        tau_min_factor=get_typed(
            sections, "disperse", "tau_min_factor", float, default=4e-3
        ),
        n_lags=get_typed(sections, "disperse", "n_lags", int, default=5),
        base_per_axis=get_typed(sections, "disperse", "base_per_axis", int),
        n_dirs=get_typed(sections, "disperse", "n_dirs", int),
        n_radii=get_typed(sections, "disperse", "n_radii", int, default=12),
        psi_profile=get_typed(sections, "disperse", "psi_profile", str, default="bump"),
        refine=get_typed(sections, "disperse", "refine", int, default=2),
        n_releases=get_typed(sections, "disperse", "n_releases", int, default=8),
        frozen=get_typed(sections, "disperse", "frozen", bool, default=False),
        residual_threshold=get_typed(
            sections, "disperse", "residual_threshold", float, default=0.5
        ),
        ells_raw=[tok.strip() for tok in raw.split(",") if tok.strip()],
    )


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------

PRESETS = {
    "taylor_green": """\
[run]
dim = 2
n = 64
nu = 0.01
dt = 1e-3
n_steps = 1000
ic = taylor_green
forcing = none
snapshot_every = 500
seed = 1
""",
    "smooth_scaling": """\
[run]
dim = 3
n = 128
nu = 0.0
dt = 1e-3
n_steps = 0
ic = random
ic_energy = 0.5
ic_k_peak = 1.0
band_limit = 1.01
forcing = none
snapshot_every = 1
seed = 2
[diagnose]
ells = 4h, 5.66h, 8h, 11.3h, 16h, 22.6h, 32h, 40h
""",
    "inverse2d": """\
[run]
dim = 2
n = 512
nu = 1.5e-4
dt = 1.0e-3
n_steps = 7000
ic = zero
forcing = shell
k_f = 64
amplitude_law = fixed_input_rate
epsilon_in = 0.1
mix = 0.25
shell_halfwidth = 4
snapshot_every = 250
seed = 7
[disperse]
ells = 8h, 12h, 16h
r_factor = 3.0
tau_min_factor = 4e-3
n_lags = 5
n_releases = 8
base_per_axis = 16
[diagnose]
ells = 8h, 12h, 16h, 24h, 32h
""",
    "direct3d": """\
[run]
dim = 3
n = 64
nu = 8e-3
dt = 5e-3
n_steps = 4000
ic = random
ic_energy = 0.3
ic_k_peak = 1.5
forcing = shell
k_f = 1
amplitude_law = fixed_input_rate
epsilon_in = 0.1
mix = 0.25
snapshot_every = 400
seed = 11
[disperse]
ells = 5h, 6h, 8h
r_factor = 3.0
tau_min_factor = 4e-3
n_lags = 5
n_releases = 8
base_per_axis = 6
n_dirs = 48
[diagnose]
ells = 4h, 5h, 6h, 8h, 10h, 12h
""",
    "shear_null": """\
[run]
dim = 2
n = 64
nu = 0.0
dt = 2e-3
n_steps = 0
ic = shear
forcing = none
snapshot_every = 1
seed = 3
[disperse]
ells = 8h
r_factor = 3.0
tau_min_factor = 4e-3
n_lags = 5
n_releases = 1
frozen = true
""",
}


def preset_text(name: str) -> str:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(
            f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}"
        ) from None
