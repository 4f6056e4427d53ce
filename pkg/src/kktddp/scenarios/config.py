"""Scenario config files: JSON documents in a generator form or a full form.

The generator form names a scenario builder and lists its parameters, weights
and solver settings::

    {"format": "kktddp-scenario/1", "generator": "stride",
     "parameters": {"stride_length": 0.4, "n_steps": 3, "dt": 0.01},
     "weights": {...}, "solver": {"max_iterations": 100}}

The full form spells out the model, phases, references and cost terms, and is
what :func:`scenario_to_config` writes. See the README for both schemas.
Every problem found while reading a config is reported as an :class:`Issue`
with the location of the offending field.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from ..costs import (
    KINDS,
    CostConfigError,
    com_tracking_term,
    control_reg_term,
    force_tracking_term,
    frame_tracking_term,
    friction_cone_term,
    joint_limit_barrier_term,
    orientation_goal_term,
    state_reg_term,
)
from ..ddp import SolverSettings
from ..model import ContactPoint, ModelError, builtin_model, load_model, tree_from_dict, tree_to_dict
from . import astronaut, stride
from .problem import ContactPhase, Scenario, ScenarioError

FORMAT = "kktddp-scenario/1"
CONFIG_DIR = Path(__file__).resolve().parent.parent / "data" / "configs"

GENERATORS = {
    "stride": (stride.build_stride, {"stride_length", "n_steps", "dt", "timing",
                                     "standing_duration"}, stride.DEFAULT_WEIGHTS),
    "astronaut": (astronaut.build_astronaut, {"target_rotation", "duration", "dt"},
                  astronaut.DEFAULT_WEIGHTS),
}
_INT_PARAMS = {"n_steps"}
_COMMON_KEYS = {"format", "name", "model", "solver", "description"}
_GENERATOR_KEYS = _COMMON_KEYS | {"generator", "parameters", "weights"}
_FULL_KEYS = _COMMON_KEYS | {"dt", "horizon", "gravity", "damping", "initial_state", "phases",
                             "references", "costs", "initial_guess", "metadata"}
_TERM_KEYS = {
    "com_tracking": {"reference", "weight"},
    "frame_tracking": {"contact", "link", "offset", "reference", "velocity_reference", "weight"},
    "force_tracking": {"reference", "weight"},
    "control_reg": {"reference", "weight"},
    "state_reg": {"reference", "weight"},
    "joint_limit_barrier": {"lower", "upper", "margin", "stiffness"},
    "orientation_goal": {"link", "target", "weight"},
    "friction_cone": {"mu", "weight"},
}
_TERM_COMMON = {"name", "kind", "window", "terminal"}


@dataclass(frozen=True)
class Issue:
    location: str
    message: str

    def __str__(self) -> str:
        return f"{self.location}: {self.message}"


class ConfigError(ValueError):
    """A config could not be read or describes an invalid scenario."""

    def __init__(self, issues):
        self.issues = list(issues)
        super().__init__("; ".join(str(i) for i in self.issues))


# ---------------------------------------------------------------------------
# reading


def read_config(path) -> dict:
    """Parse a config file; syntax errors carry their line and column."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([Issue(str(path), f"cannot read file ({exc.strerror})")]) from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            [Issue(f"{path.name}: line {exc.lineno}, column {exc.colno}", exc.msg)]
        ) from None
    if not isinstance(data, dict):
        raise ConfigError([Issue(path.name, "top level must be a JSON object")])
    return data


def resolve_config(name_or_path) -> Path:
    """A path as given, or the shipped config of that name."""
    p = Path(name_or_path)
    if p.exists():
        return p
    for cand in (CONFIG_DIR / p.name, CONFIG_DIR / f"{p.name}.json"):
        if cand.exists():
            return cand
    return p


def shipped_configs() -> list[Path]:
    return sorted(CONFIG_DIR.glob("*.json"))


class _Reader:
    """Collects issues while converting config fields."""

    def __init__(self, base_dir):
        self.base_dir = Path(base_dir)
        self.issues: list[Issue] = []

    def error(self, loc, msg):
        self.issues.append(Issue(loc, msg))

    def unknown_keys(self, d, allowed, loc):
        for k in d:
            if k not in allowed:
                self.error(f"{loc}.{k}" if loc else k, "unknown field")

    def number(self, value, loc, positive=False, integer=False, default=None):
        if value is None:
            if default is None:
                self.error(loc, "required field is missing")
            return default
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.error(loc, f"expected a number, got {type(value).__name__}")
            return default
        if integer and (not float(value).is_integer()):
            self.error(loc, "expected an integer")
            return default
        if not math.isfinite(value):
            self.error(loc, "must be finite")
            return default
        if positive and not value > 0:
            self.error(loc, "must be positive")
            return default
        return int(value) if integer else float(value)

    def array(self, value, loc, refs=None):
        """Inline list, ``"@name"`` reference or ``{"file": "x.csv"}``."""
        if isinstance(value, str) and value.startswith("@"):
            key = value[1:]
            if refs is None or key not in refs:
                self.error(loc, f"unknown reference {value!r}")
                return None
            return refs[key]
        if isinstance(value, dict):
            if set(value) != {"file"}:
                self.error(loc, "a file reference has exactly one field, 'file'")
                return None
            path = self.base_dir / str(value["file"])
            try:
                return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
            except (OSError, ValueError) as exc:
                self.error(loc, f"cannot read {path.name}: {exc}")
                return None
        try:
            arr = np.asarray(value, dtype=float)
        except (TypeError, ValueError):
            self.error(loc, "expected a numeric array")
            return None
        if not np.all(np.isfinite(arr)):
            self.error(loc, "array entries must be finite")
            return None
        return arr

    def ragged(self, value, loc, refs=None):
        """List of per-step vectors of varying length (force references)."""
        if isinstance(value, str):
            return self.array(value, loc, refs)
        if not isinstance(value, list):
            self.error(loc, "expected a list of per-step vectors")
            return None
        out = []
        for i, v in enumerate(value):
            a = self.array(v, f"{loc}[{i}]")
            if a is None:
                return None
            out.append(np.atleast_1d(a))
        return out


def _solver_settings(r: _Reader, d, iterations=None, regularization=None) -> SolverSettings:
    d = dict(d or {})
    names = {f.name for f in fields(SolverSettings)}
    for k in list(d):
        if k not in names:
            r.error(f"solver.{k}", "unknown setting")
            d.pop(k)
    if iterations is not None:
        d["max_iterations"] = iterations
    if regularization is not None:
        d["regularization"] = regularization
    try:
        return SolverSettings(**d)
    except (TypeError, ValueError) as exc:
        # settings messages lead with the offending field when there is one
        field = str(exc).split(" ", 1)[0]
        r.error(f"solver.{field}" if field in names else "solver", str(exc))
        return SolverSettings()


def _model(r: _Reader, spec, default):
    if spec is None:
        spec = default
    try:
        if isinstance(spec, dict):
            return tree_from_dict(spec)
        if isinstance(spec, str):
            path = r.base_dir / spec
            if spec.endswith(".json") and path.exists():
                return load_model(path)
            return builtin_model(spec)
        r.error("model", "expected a built-in model name, a file name or an inline model")
    except (ModelError, OSError, json.JSONDecodeError) as exc:
        r.error("model", str(exc))
    return None


def _from_generator(r: _Reader, cfg, dt, iterations, regularization):
    r.unknown_keys(cfg, _GENERATOR_KEYS, "")
    gen = cfg.get("generator")
    if gen not in GENERATORS:
        r.error("generator", f"expected one of {sorted(GENERATORS)}, got {gen!r}")
        return None
    builder, allowed, default_weights = GENERATORS[gen]
    params = cfg.get("parameters", {})
    weights = cfg.get("weights", {})
    if not isinstance(params, dict):
        r.error("parameters", "expected an object")
        params = {}
    if not isinstance(weights, dict):
        r.error("weights", "expected an object")
        weights = {}
    kwargs = {}
    for k, v in params.items():
        loc = f"parameters.{k}"
        if k not in allowed:
            r.error(loc, "unknown parameter")
        elif k == "timing":
            if not isinstance(v, dict):
                r.error(loc, "expected an object of phase durations in seconds")
                continue
            r.unknown_keys(v, set(stride.DEFAULT_TIMING), loc)
            kwargs[k] = {p: r.number(x, f"{loc}.{p}", positive=True) for p, x in v.items()
                         if p in stride.DEFAULT_TIMING}
        else:
            kwargs[k] = r.number(v, loc, integer=k in _INT_PARAMS)
    w = {}
    for k, v in weights.items():
        if k not in default_weights:
            r.error(f"weights.{k}", "unknown weight")
        else:
            val = r.number(v, f"weights.{k}")
            if val is not None and val < 0:
                r.error(f"weights.{k}", "must be nonnegative")
            w[k] = val
    if dt is not None:
        kwargs["dt"] = dt
    settings = _solver_settings(r, cfg.get("solver"), iterations, regularization)
    tree = _model(r, cfg.get("model"), "walker" if gen == "stride" else "astronaut")
    if r.issues:
        return None
    try:
        sc = builder(**kwargs, weights=w, settings=settings, tree=tree)
    except stride.ReachabilityError as exc:
        r.error("parameters.stride_length", f"unreachable: {exc}")
        return None
    except (ScenarioError, CostConfigError, ModelError, ValueError) as exc:
        r.error("parameters", str(exc))
        return None
    if cfg.get("name"):
        sc.name = str(cfg["name"])
    sc.metadata["generator"] = gen
    return sc


def _contact_point(r: _Reader, tree, d, loc):
    if "contact" in d:
        name = d["contact"]
        if name not in tree.contacts:
            r.error(f"{loc}.contact", f"unknown contact {name!r}")
            return None
        return tree.contacts[name]
    try:
        link = tree.link_index(d.get("link"))
    except ModelError as exc:
        r.error(f"{loc}.link", str(exc))
        return None
    off = r.array(d.get("offset", [0.0, 0.0]), f"{loc}.offset")
    if off is None or off.shape != (2,):
        r.error(f"{loc}.offset", "expected two numbers")
        return None
    return ContactPoint(link, tuple(float(x) for x in off))


def _term(r: _Reader, d, loc, tree, refs, layouts):
    if not isinstance(d, dict):
        r.error(loc, "expected an object")
        return None
    kind = d.get("kind")
    if kind not in KINDS:
        r.error(f"{loc}.kind", f"expected one of {list(KINDS)}, got {kind!r}")
        return None
    r.unknown_keys(d, _TERM_COMMON | _TERM_KEYS[kind], loc)
    name = str(d.get("name", kind))
    terminal = bool(d.get("terminal", False))
    window = d.get("window")
    if window is not None:
        if (not isinstance(window, list) or len(window) != 2
                or not all(isinstance(x, int) and not isinstance(x, bool) for x in window)):
            r.error(f"{loc}.window", "expected [first_step, end_step]")
            return None
        window = tuple(window)

    def arr(key, required=True):
        if key not in d:
            if required:
                r.error(f"{loc}.{key}", "required field is missing")
            return None
        return r.array(d[key], f"{loc}.{key}", refs)

    def weight():
        if "weight" not in d:
            r.error(f"{loc}.weight", "required field is missing")
            return None
        return r.array(d["weight"], f"{loc}.weight", refs)

    n_issues = len(r.issues)
    try:
        if kind == "com_tracking":
            ref, W = arr("reference"), weight()
            if len(r.issues) == n_issues:
                return com_tracking_term(tree, ref, W, window, terminal, name)
        elif kind == "frame_tracking":
            pt = _contact_point(r, tree, d, loc)
            ref, vel, W = arr("reference"), arr("velocity_reference", False), weight()
            if len(r.issues) == n_issues:
                return frame_tracking_term(tree, pt, ref, W, vel, window, terminal, name)
        elif kind == "force_tracking":
            ref = r.ragged(d.get("reference"), f"{loc}.reference", refs)
            W = r.number(d.get("weight"), f"{loc}.weight")
            if len(r.issues) == n_issues:
                return force_tracking_term(ref, W, window, name)
        elif kind == "control_reg":
            ref, W = arr("reference", False), weight()
            if len(r.issues) == n_issues:
                return control_reg_term(tree.n_joints, W, ref, window, name)
        elif kind == "state_reg":
            ref, W = arr("reference"), weight()
            if len(r.issues) == n_issues:
                return state_reg_term(tree.nx, ref, W, window, terminal, name)
        elif kind == "joint_limit_barrier":
            lo, hi = arr("lower", False), arr("upper", False)
            margin = r.number(d.get("margin"), f"{loc}.margin", positive=True, default=0.05)
            stiff = r.number(d.get("stiffness"), f"{loc}.stiffness", positive=True, default=10.0)
            if len(r.issues) == n_issues:
                return joint_limit_barrier_term(tree, lo, hi, margin, stiff, window, terminal,
                                                name)
        elif kind == "orientation_goal":
            try:
                link = tree.link_index(d.get("link", 0))
            except ModelError as exc:
                r.error(f"{loc}.link", str(exc))
            target, W = arr("target"), weight()
            if len(r.issues) == n_issues:
                return orientation_goal_term(tree, link, target, W, window, terminal, name)
        elif kind == "friction_cone":
            mu = r.number(d.get("mu"), f"{loc}.mu", positive=True)
            W = r.number(d.get("weight"), f"{loc}.weight")
            if len(r.issues) == n_issues:
                return friction_cone_term(layouts, mu, W, window, name)
    except (CostConfigError, ModelError, ValueError) as exc:
        r.error(loc, str(exc))
    return None


def _from_full(r: _Reader, cfg, dt, iterations, regularization):
    r.unknown_keys(cfg, _FULL_KEYS, "")
    tree = _model(r, cfg.get("model"), None)
    cfg_dt = r.number(cfg.get("dt"), "dt", positive=True)
    if dt is not None and cfg_dt is not None and dt != cfg_dt:
        r.error("dt", "a dt override needs the generator form, since references are "
                      "sampled at the configured dt")
    settings = _solver_settings(r, cfg.get("solver"), iterations, regularization)
    damping = r.number(cfg.get("damping"), "damping", default=1e-8)
    if damping is not None and damping < 0:
        r.error("damping", "must be nonnegative")
    gravity = r.array(cfg.get("gravity", [0.0, -9.81]), "gravity")
    if gravity is not None and gravity.shape != (2,):
        r.error("gravity", "expected two numbers")
    phases = []
    raw_phases = cfg.get("phases")
    if not isinstance(raw_phases, list) or not raw_phases:
        r.error("phases", "expected a nonempty list")
        raw_phases = []
    for j, p in enumerate(raw_phases):
        loc = f"phases[{j}]"
        if not isinstance(p, dict):
            r.error(loc, "expected an object")
            continue
        r.unknown_keys(p, {"kind", "contacts", "duration"}, loc)
        dur = r.number(p.get("duration"), f"{loc}.duration", positive=True, integer=True)
        try:
            phases.append(ContactPhase(tuple(p.get("contacts", ())), dur or 1, p.get("kind")))
        except ScenarioError as exc:
            r.error(loc, str(exc))
        if tree is not None:
            for c in p.get("contacts", ()):
                if c not in tree.contacts:
                    r.error(f"{loc}.contacts", f"unknown contact {c!r}")
    if tree is None or r.issues:
        return None

    refs = {}
    for k, v in (cfg.get("references") or {}).items():
        val = r.ragged(v, f"references.{k}") if k == "force" else r.array(v, f"references.{k}")
        if val is not None:
            refs[k] = val
    x0 = r.array(cfg.get("initial_state", [0.0] * tree.nx), "initial_state", refs)
    if x0 is not None and x0.shape != (tree.nx,):
        r.error("initial_state", f"expected {tree.nx} entries, got {x0.size}")

    probe = Scenario("probe", tree, phases, cfg_dt or 1.0, np.zeros(tree.nx), [])
    N = probe.horizon
    layouts = [probe.force_layout(i) for i in range(N)]
    running, terminal = [], []
    raw_costs = cfg.get("costs", [])
    if not isinstance(raw_costs, list):
        r.error("costs", "expected a list of cost terms")
        raw_costs = []
    for j, d in enumerate(raw_costs):
        term = _term(r, d, f"costs[{j}]", tree, refs, layouts)
        if term is not None:
            (terminal if term.terminal else running).append(term)

    guess = cfg.get("initial_guess", "zeros")
    if isinstance(guess, str) and guess in ("zeros", "ik"):
        initial_guess = guess
    else:
        initial_guess = r.array(guess, "initial_guess", refs)
        if initial_guess is not None and initial_guess.shape != (N, tree.n_joints):
            r.error("initial_guess", f"expected {N} x {tree.n_joints} torques")
    if r.issues:
        return None

    metadata = dict(cfg.get("metadata") or {})
    if "horizon" in cfg:
        metadata["horizon"] = r.number(cfg["horizon"], "horizon", integer=True)
    return Scenario(
        name=str(cfg.get("name", "scenario")),
        tree=tree,
        phases=phases,
        dt=cfg_dt,
        x0=x0,
        running=running,
        terminal=terminal,
        gravity=gravity,
        settings=settings,
        damping=damping,
        references=refs,
        initial_guess=initial_guess,
        metadata=metadata,
    )


def _split_issue(msg: str) -> Issue:
    loc, _, text = msg.partition(": ")
    return Issue(loc, text) if text else Issue("scenario", msg)


def scenario_from_config(cfg: dict, base_dir=".", dt=None, iterations=None,
                         regularization=None) -> Scenario:
    """Build and check the scenario a parsed config describes.

    ``dt``, ``iterations`` and ``regularization`` override the config values.
    Raises :class:`ConfigError` listing every issue found.
    """
    r = _Reader(base_dir)
    fmt = cfg.get("format", FORMAT)
    if fmt != FORMAT:
        r.error("format", f"expected {FORMAT!r}, got {fmt!r}")
        raise ConfigError(r.issues)
    if dt is not None and not dt > 0:
        r.error("--dt", "must be positive")
    if iterations is not None and iterations < 0:
        r.error("--iterations", "must be nonnegative")
    if "generator" in cfg:
        sc = _from_generator(r, cfg, dt, iterations, regularization)
    else:
        sc = _from_full(r, cfg, dt, iterations, regularization)
    if sc is not None:
        r.issues += [_split_issue(m) for m in sc.validate()]
    if r.issues:
        raise ConfigError(r.issues)
    return sc


def load_scenario(path, dt=None, iterations=None, regularization=None) -> Scenario:
    """Read a config file (or a shipped config name) and build its scenario."""
    path = resolve_config(path)
    return scenario_from_config(read_config(path), path.parent, dt, iterations, regularization)


def validate_config(path) -> list[Issue]:
    """Every issue of a config file, without solving (empty when valid)."""
    try:
        load_scenario(path)
    except ConfigError as exc:
        return exc.issues
    return []


# ---------------------------------------------------------------------------
# writing


def _tolist(a):
    return np.asarray(a, dtype=float).tolist()


def _weight_out(W):
    if isinstance(W, float):
        return W
    W = np.asarray(W)
    if np.array_equal(W, np.diag(np.diag(W))):
        return _tolist(np.diag(W))
    return _tolist(W)


def _ref_out(value, refs):
    for key, ref in refs.items():
        if key == "force":
            continue
        if np.shape(ref) == np.shape(value) and np.array_equal(ref, value):
            return f"@{key}"
    return _tolist(value)


def _term_out(term, refs) -> dict:
    P = term.params
    d = {"name": term.name, "kind": term.kind}
    if term.window is not None:
        d["window"] = [int(term.window[0]), int(term.window[1])]
    if term.terminal:
        d["terminal"] = True
    if term.kind == "joint_limit_barrier":
        d.update(lower=_tolist(P["lower"]), upper=_tolist(P["upper"]),
                 margin=float(P["margin"]), stiffness=float(P["stiffness"]))
        return d
    if term.kind == "friction_cone":
        d.update(mu=float(P["mu"]), weight=term.weight)
        return d
    if term.kind == "force_tracking":
        shared = refs.get("force")
        same = shared is not None and len(shared) == len(P["reference"]) and all(
            np.array_equal(a, b) for a, b in zip(shared, P["reference"]))
        d["reference"] = "@force" if same else [_tolist(x) for x in P["reference"]]
        d["weight"] = term.weight
        return d
    if term.kind in ("frame_tracking", "orientation_goal"):
        d["link"] = int(P["link"])
    if term.kind == "frame_tracking":
        d["offset"] = [float(x) for x in P["offset"]]
        if "velocity_reference" in P:
            d["velocity_reference"] = _ref_out(P["velocity_reference"], refs)
    if term.kind == "orientation_goal":
        d["target"] = _tolist(P["target"])
    else:
        d["reference"] = _ref_out(P["reference"], refs)
    d["weight"] = _weight_out(term.weight)
    return d


def scenario_to_config(scenario: Scenario) -> dict:
    """Full-form config that rebuilds ``scenario`` exactly."""
    refs = {k: v for k, v in scenario.references.items()}
    out_refs = {k: ([_tolist(x) for x in v] if k == "force" else _tolist(v))
                for k, v in refs.items()}
    guess = scenario.initial_guess
    meta = {k: v for k, v in scenario.metadata.items() if k != "horizon"}
    return {
        "format": FORMAT,
        "name": scenario.name,
        "model": tree_to_dict(scenario.tree),
        "dt": float(scenario.dt),
        "horizon": scenario.horizon,
        "gravity": _tolist(scenario.gravity),
        "damping": float(scenario.damping),
        "initial_state": _tolist(scenario.x0),
        "phases": [{"kind": p.kind, "contacts": list(p.contacts), "duration": int(p.duration)}
                   for p in scenario.phases],
        "references": out_refs,
        "costs": [_term_out(t, refs) for t in scenario.running + scenario.terminal],
        "solver": scenario.settings.to_dict(),
        "initial_guess": guess if isinstance(guess, str) else _tolist(guess),
        "metadata": json.loads(json.dumps(meta, default=_tolist)),
    }


def write_config(cfg: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(cfg, fh, indent=1)
        fh.write("\n")
