"""Run configuration: a sectioned key-value text format.

Configs use ``[section]`` headers with ``key = value`` lines; arrays are
comma-separated lists and matrices live in referenced CSV files, so a
config is diffable and trivially parseable.  Exactly one of the
``[modulation]`` and ``[weights]`` sections may describe the coupling;
the other representation is derived.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import activations
from .dde import History, SemilinearParams, semilinear_rhs
from .grid import TimeGrid
from .modulation import (
    FEEDFORWARD,
    RECURRENT,
    DelaySet,
    DriveSignal,
    ModulationProfile,
    ValidationReport,
    assemble_weight_matrix,
    compile_profile,
    full_delay_set,
    validate,
)
from .network import NetworkSpec
from .reporting import (
    read_first_segment,
    read_history_table,
    read_matrix,
    read_profile,
)
from .verify import GENERAL, MAPLIMIT, SEMILINEAR, Problem

MODES = (FEEDFORWARD, RECURRENT)
SCHEMES = (GENERAL, SEMILINEAR, MAPLIMIT)

_KNOWN_KEYS = {
    "run": {"mode", "scheme", "seed", "x0"},
    "grid": {"T", "N", "segments"},
    "delays": {"values", "full"},
    "modulation": {"profile", "first_segment"},
    "weights": {"hidden", "internal"},
    "input": {"weights", "vector", "series", "activation", "preprocessing"},
    "output": {"weights", "activation"},
    "drive": {"biases", "input_segment"},
    "semilinear": {"alpha", "nonlinearity", "eta", "p"},
    "general": {"alpha", "nonlinearity", "eta", "p"},
    "history": {"table"},
    "verify": {"tolerance", "count", "thetas", "node_counts", "min_order",
               "slope_tolerance", "substeps"},
}


class ConfigError(ValueError):
    """The configuration file is missing, malformed, or inconsistent."""


@dataclass
class RunConfig:
    """Parsed configuration; matrices stay as paths until built."""

    path: Path
    mode: str
    scheme: str
    seed: int
    x0: float
    grid: TimeGrid
    delays: DelaySet | None
    profile_path: Path | None
    first_segment_path: Path | None
    hidden_paths: list[Path] | None
    internal_path: Path | None
    input_weights_path: Path | None
    input_vector: np.ndarray | None
    input_series_path: Path | None
    input_activation: str
    preprocessing: str
    output_weights_path: Path | None
    output_activation: str
    biases_path: Path | None
    input_segment: np.ndarray | None
    semilinear: SemilinearParams | None
    general_params: SemilinearParams
    history_path: Path | None
    verify_options: dict[str, str] = field(default_factory=dict)

    @property
    def has_coupling(self) -> bool:
        return self.profile_path is not None or self.hidden_paths is not None \
            or self.internal_path is not None

    def verify_float(self, key: str, default: float) -> float:
        raw = self.verify_options.get(key)
        try:
            return float(raw) if raw is not None else default
        except ValueError:
            raise ConfigError(f"[verify] {key} = {raw!r} is not a number") from None

    def verify_int(self, key: str, default: int) -> int:
        raw = self.verify_options.get(key)
        try:
            return int(raw) if raw is not None else default
        except ValueError:
            raise ConfigError(f"[verify] {key} = {raw!r} is not an integer") from None

    def verify_list(self, key: str, default: list[float]) -> list[float]:
        raw = self.verify_options.get(key)
        if raw is None:
            return default
        return _parse_floats(raw, f"[verify] {key}")


def _parse_floats(raw: str, context: str) -> list[float]:
    try:
        return [float(part) for part in raw.split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"{context}: {raw!r} is not a comma-separated number list") from None


def _parse_bool(raw: str, context: str) -> bool:
    value = raw.strip().lower()
    if value in ("true", "yes", "1"):
        return True
    if value in ("false", "no", "0"):
        return False
    raise ConfigError(f"{context}: {raw!r} is not a boolean")


class _Section:
    def __init__(self, parser: configparser.ConfigParser, name: str):
        self.name = name
        self.present = parser.has_section(name)
        self._items = dict(parser.items(name)) if self.present else {}

    def get(self, key: str, default=None):
        return self._items.get(key, default)

    def require(self, key: str) -> str:
        if key not in self._items:
            raise ConfigError(f"[{self.name}] is missing required key {key!r}")
        return self._items[key]

    def get_float(self, key: str, default=None):
        raw = self.get(key)
        if raw is None:
            return default
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"[{self.name}] {key} = {raw!r} is not a number") from None

    def get_int(self, key: str, default=None):
        raw = self.get(key)
        if raw is None:
            return default
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"[{self.name}] {key} = {raw!r} is not an integer") from None


def _resolve_path(base: Path, raw: str, context: str) -> Path:
    path = Path(raw.strip())
    if not path.is_absolute():
        path = base / path
    if not path.is_file():
        raise ConfigError(f"{context}: referenced file {path} does not exist")
    return path


def load_config(path) -> RunConfig:
    """Parse and structurally validate one configuration file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read(path)
    except configparser.Error as err:
        raise ConfigError(f"{path}: {err}") from None

    for section in parser.sections():
        if section not in _KNOWN_KEYS:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key, _ in parser.items(section):
            if key not in _KNOWN_KEYS[section]:
                raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")

    base = path.parent
    run = _Section(parser, "run")
    grid_s = _Section(parser, "grid")
    if not run.present or not grid_s.present:
        raise ConfigError(f"{path}: sections [run] and [grid] are required")

    mode = run.require("mode").strip()
    if mode not in MODES:
        raise ConfigError(f"[run] mode must be one of {MODES}, got {mode!r}")
    scheme = run.require("scheme").strip()
    if scheme not in SCHEMES:
        raise ConfigError(f"[run] scheme must be one of {SCHEMES}, got {scheme!r}")
    if mode == RECURRENT and scheme == MAPLIMIT:
        raise ConfigError("the map limit is a feed-forward construction; "
                          "recurrent mode supports general and semilinear")

    T = grid_s.get_float("T", None)
    N = grid_s.get_int("N", None)
    segments = grid_s.get_int("segments", None)
    if T is None or N is None or segments is None:
        raise ConfigError("[grid] requires T, N, and segments")
    try:
        grid = TimeGrid(clock_cycle=T, nodes_per_layer=N, segment_count=segments)
    except ValueError as err:
        raise ConfigError(f"[grid]: {err}") from None

    delays = None
    delays_s = _Section(parser, "delays")
    if delays_s.present:
        raw_values = delays_s.get("values")
        use_full = delays_s.get("full")
        if raw_values is not None and use_full is not None:
            raise ConfigError("[delays] takes either values or full, not both")
        if use_full is not None and _parse_bool(use_full, "[delays] full"):
            delays = full_delay_set(grid.nodes_per_layer)
        elif raw_values is not None:
            numbers = _parse_floats(raw_values, "[delays] values")
            ints = [int(v) for v in numbers]
            if any(i != v for i, v in zip(ints, numbers)):
                raise ConfigError("[delays] values must be integers (grid units)")
            try:
                delays = DelaySet(tuple(ints))
            except ValueError as err:
                raise ConfigError(f"[delays]: Property (I) violated: {err}") from None
            if delays.max_delay >= 2 * grid.nodes_per_layer:
                raise ConfigError(
                    f"[delays]: Property (I) violated: max delay {delays.max_delay} "
                    f"must be < 2N = {2 * grid.nodes_per_layer}"
                )

    modulation_s = _Section(parser, "modulation")
    weights_s = _Section(parser, "weights")
    if modulation_s.present and weights_s.present:
        raise ConfigError("supply exactly one of [modulation] and [weights], not both")

    profile_path = first_segment_path = None
    if modulation_s.present:
        profile_path = _resolve_path(base, modulation_s.require("profile"), "[modulation] profile")
        raw_first = modulation_s.get("first_segment")
        if raw_first is not None:
            first_segment_path = _resolve_path(base, raw_first, "[modulation] first_segment")
        if delays is None:
            raise ConfigError("[modulation] requires a [delays] section")

    hidden_paths = internal_path = None
    if weights_s.present:
        if mode == FEEDFORWARD:
            raw = weights_s.require("hidden")
            hidden_paths = [
                _resolve_path(base, part, "[weights] hidden")
                for part in raw.split(",") if part.strip()
            ]
            if len(hidden_paths) != grid.segment_count - 1:
                raise ConfigError(
                    f"[weights] hidden needs {grid.segment_count - 1} matrices "
                    f"for segments 2..{grid.segment_count}, got {len(hidden_paths)}"
                )
        else:
            internal_path = _resolve_path(base, weights_s.require("internal"), "[weights] internal")

    input_s = _Section(parser, "input")
    input_weights_path = input_series_path = None
    input_vector = None
    if input_s.present:
        raw_w = input_s.get("weights")
        if raw_w is not None:
            input_weights_path = _resolve_path(base, raw_w, "[input] weights")
        raw_vec = input_s.get("vector")
        if raw_vec is not None:
            input_vector = np.array(_parse_floats(raw_vec, "[input] vector"))
        raw_series = input_s.get("series")
        if raw_series is not None:
            input_series_path = _resolve_path(base, raw_series, "[input] series")
    input_activation = (input_s.get("activation") or activations.TANH).strip()
    preprocessing = (input_s.get("preprocessing") or activations.IDENTITY).strip()

    output_s = _Section(parser, "output")
    output_weights_path = None
    if output_s.present:
        output_weights_path = _resolve_path(base, output_s.require("weights"), "[output] weights")
    output_activation = (output_s.get("activation") or activations.IDENTITY).strip()

    drive_s = _Section(parser, "drive")
    biases_path = None
    input_segment = None
    if drive_s.present:
        raw_b = drive_s.get("biases")
        if raw_b is not None:
            biases_path = _resolve_path(base, raw_b, "[drive] biases")
        raw_j = drive_s.get("input_segment")
        if raw_j is not None:
            input_segment = np.array(_parse_floats(raw_j, "[drive] input_segment"))

    semilinear = _parse_params(_Section(parser, "semilinear"))
    if scheme in (SEMILINEAR, MAPLIMIT) and semilinear is None:
        raise ConfigError(f"scheme {scheme!r} requires a [semilinear] section")
    general_params = _parse_params(_Section(parser, "general"))
    if general_params is None:
        general_params = SemilinearParams(alpha=1.0, nonlinearity=activations.SINE)

    history_s = _Section(parser, "history")
    history_path = None
    if history_s.present:
        history_path = _resolve_path(base, history_s.require("table"), "[history] table")

    verify_options = dict(_Section(parser, "verify")._items)

    return RunConfig(
        path=path,
        mode=mode,
        scheme=scheme,
        seed=run.get_int("seed", 0),
        x0=run.get_float("x0", 0.0),
        grid=grid,
        delays=delays,
        profile_path=profile_path,
        first_segment_path=first_segment_path,
        hidden_paths=hidden_paths,
        internal_path=internal_path,
        input_weights_path=input_weights_path,
        input_vector=input_vector,
        input_series_path=input_series_path,
        input_activation=input_activation,
        preprocessing=preprocessing,
        output_weights_path=output_weights_path,
        output_activation=output_activation,
        biases_path=biases_path,
        input_segment=input_segment,
        semilinear=semilinear,
        general_params=general_params,
        history_path=history_path,
        verify_options=verify_options,
    )


def _parse_params(section: _Section) -> SemilinearParams | None:
    if not section.present:
        return None
    alpha = section.get_float("alpha", None)
    if alpha is None:
        raise ConfigError(f"[{section.name}] requires alpha")
    name = (section.get("nonlinearity") or activations.SINE).strip()
    try:
        return SemilinearParams(
            alpha=alpha,
            nonlinearity=name,
            eta=section.get_float("eta", 1.0),
            p=section.get_float("p", 2.0),
        )
    except ValueError as err:
        raise ConfigError(f"[{section.name}]: {err}") from None


@dataclass
class Coupling:
    """Both coupling representations plus the validation verdict."""

    delays: DelaySet
    profile: ModulationProfile
    hidden_weights: list[np.ndarray] | None
    internal_weights: np.ndarray | None
    biases: np.ndarray | None
    from_weights: bool
    validation: ValidationReport


def build_coupling(cfg: RunConfig) -> Coupling:
    """Read the configured coupling and derive the missing representation."""
    grid = cfg.grid
    N, S = grid.nodes_per_layer, grid.segment_count
    if not cfg.has_coupling:
        raise ConfigError("one of [modulation] or [weights] is required")

    if cfg.profile_path is not None:
        delays = cfg.delays
        values = read_profile(cfg.profile_path, delays, N, S, cfg.mode)
        first = None
        if cfg.first_segment_path is not None:
            first = read_first_segment(cfg.first_segment_path, delays, N)
        profile = ModulationProfile(cfg.mode, values, first)
        biases = None
        hidden = internal = None
        if cfg.mode == FEEDFORWARD:
            biases = _read_biases(cfg, N, S)
            hidden = [
                assemble_weight_matrix(profile, delays, grid, seg,
                                       biases=biases[seg - 2])
                for seg in range(2, S + 1)
            ]
        else:
            internal = assemble_weight_matrix(profile, delays, grid, 2)
        return Coupling(delays, profile, hidden, internal, biases,
                        from_weights=False,
                        validation=validate(profile, delays, grid))

    delays = cfg.delays if cfg.delays is not None else full_delay_set(N)
    if cfg.mode == FEEDFORWARD:
        if cfg.biases_path is not None:
            raise ConfigError(
                "[drive] biases conflicts with [weights]: bias weights already "
                "live in the matrices' last column"
            )
        hidden = []
        for p in cfg.hidden_paths:
            W = read_matrix(p)
            if W.shape != (N, N + 1):
                raise ConfigError(f"{p}: hidden matrix must be ({N}, {N + 1}), got {W.shape}")
            hidden.append(W)
        profile = compile_profile(hidden, delays, grid)
        biases = np.stack([W[:, N] for W in hidden]) if hidden else np.zeros((0, N))
        return Coupling(delays, profile, hidden, None, biases,
                        from_weights=True,
                        validation=validate(profile, delays, grid))

    W = read_matrix(cfg.internal_path)
    if W.shape != (N, N):
        raise ConfigError(f"{cfg.internal_path}: internal matrix must be ({N}, {N}), got {W.shape}")
    profile = compile_profile(W, delays, grid, mode=RECURRENT)
    return Coupling(delays, profile, None, W, None,
                    from_weights=True,
                    validation=validate(profile, delays, grid))


def _read_biases(cfg: RunConfig, N: int, S: int) -> np.ndarray:
    if cfg.biases_path is None:
        return np.zeros((S - 1, N))
    biases = read_matrix(cfg.biases_path)
    if biases.shape != (S - 1, N):
        raise ConfigError(
            f"{cfg.biases_path}: biases must be ({S - 1}, {N}) for segments 2..{S}, "
            f"got {biases.shape}"
        )
    return biases


def _build_history(cfg: RunConfig) -> History:
    table = read_history_table(cfg.history_path) if cfg.history_path else None
    if table is not None and len(table) == 0:
        table = None
    return History(initial_value=cfg.x0, table=table)


def build_problem(cfg: RunConfig) -> tuple[Problem, Coupling]:
    """Materialize the full problem: coupling, drive, and network view."""
    coupling = build_coupling(cfg)
    grid = cfg.grid
    N, S = grid.nodes_per_layer, grid.segment_count
    history = _build_history(cfg)
    params = cfg.semilinear
    rhs = semilinear_rhs(cfg.general_params) if cfg.scheme == GENERAL else None

    try:
        if cfg.mode == RECURRENT:
            if cfg.input_weights_path is None or cfg.input_series_path is None:
                raise ConfigError(
                    "recurrent runs need [input] weights and series"
                )
            input_weights = read_matrix(cfg.input_weights_path)
            series = read_matrix(cfg.input_series_path)
            if series.shape[0] != S:
                raise ConfigError(
                    f"{cfg.input_series_path}: expected {S} input rows, got {series.shape[0]}"
                )
            inputs = np.column_stack([series, np.ones(S)])
            if input_weights.shape != (N, inputs.shape[1]):
                raise ConfigError(
                    f"{cfg.input_weights_path}: input weights must be "
                    f"({N}, {inputs.shape[1]}), got {input_weights.shape}"
                )
            f_in = activations.get_activation(cfg.input_activation)
            z = np.asarray(f_in(inputs @ input_weights.T), dtype=float)
            drive = DriveSignal.recurrent(z)
            problem = Problem(
                mode=cfg.mode, scheme=cfg.scheme, grid=grid,
                delays=coupling.delays, profile=coupling.profile, drive=drive,
                history=history, params=params, rhs=rhs,
                internal_weights=coupling.internal_weights,
                input_weights=input_weights, inputs=inputs,
                input_activation=cfg.input_activation, seed=cfg.seed,
            )
            return problem, coupling

        network = None
        u = None
        input_weights = None
        if cfg.input_weights_path is not None:
            input_weights = read_matrix(cfg.input_weights_path)
            if input_weights.shape[0] != N:
                raise ConfigError(
                    f"{cfg.input_weights_path}: input weights must have {N} rows, "
                    f"got {input_weights.shape[0]}"
                )
            network = NetworkSpec(
                grid=grid,
                input_weights=input_weights,
                hidden_weights=coupling.hidden_weights,
                output_weights=(read_matrix(cfg.output_weights_path)
                                if cfg.output_weights_path else None),
                input_activation=cfg.input_activation,
                preprocessing=cfg.preprocessing,
                output_activation=cfg.output_activation,
                semilinear=params,
                initial_value=cfg.x0,
            )
            if cfg.input_vector is not None:
                if len(cfg.input_vector) != input_weights.shape[1] - 1:
                    raise ConfigError(
                        f"[input] vector has {len(cfg.input_vector)} values; input "
                        f"weights expect M = {input_weights.shape[1] - 1}"
                    )
                u = np.append(cfg.input_vector, 1.0)

        if cfg.input_segment is not None and cfg.input_vector is not None:
            raise ConfigError(
                "give either [drive] input_segment or [input] vector, not both"
            )
        if cfg.input_segment is not None:
            if cfg.input_segment.shape != (N,):
                raise ConfigError(f"[drive] input_segment must have {N} values")
            J = cfg.input_segment
        elif network is not None and u is not None:
            if cfg.scheme == GENERAL:
                f_in = activations.get_activation(cfg.input_activation)
            else:
                f_in = activations.get_activation(cfg.preprocessing)
            J = np.asarray(f_in(input_weights @ u), dtype=float)
        else:
            raise ConfigError(
                "feed-forward runs need either [drive] input_segment or "
                "[input] weights plus vector"
            )
        drive = DriveSignal.feedforward(
            input_segment=J,
            biases=coupling.biases if coupling.biases is not None else np.zeros((S - 1, N)),
        )
        problem = Problem(
            mode=cfg.mode, scheme=cfg.scheme, grid=grid, delays=coupling.delays,
            profile=coupling.profile, drive=drive, history=history,
            params=params, rhs=rhs, network=network, u=u, seed=cfg.seed,
        )
        return problem, coupling
    except ValueError as err:
        if isinstance(err, ConfigError):
            raise
        raise ConfigError(str(err)) from err
