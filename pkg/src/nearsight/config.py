"""Experiment configuration files (TOML) and their validation.

A config has top-level scalars plus optional sections.  Every key is
checked against the schema below; unknown keys and sections are errors.

Top level::

    kind          = "weak_homogeneous" | "weak_perturbed" | "strong" | "hessian" | "bands" | "gaps"
    seed          = 0        # non-negative integer
    n_atoms       = 100      # chain length (strong defaults to 200)
    kgrid         = 1024     # Bloch grid used by the gap solver and band output
    hopping_scale = 0.5      # interband hopping f3 at the unit bond
    output_dir    = "out"    # optional

Sections::

    [gaps]          gap_plus, gap_minus   (number or list of numbers)
    [model]         c1, c2, a, b, d       (explicit toy parameters; bands/gaps only)
    [fit]           floor, window = [r_min, r_max]
    [perturbation]  eps_list, norm_kind = "max" | "l2_upsilon", decay_exponent
    [strong]        observe_site
    [hessian]       probe, step
"""

from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .tightbinding import ToyChainParams

__all__ = ["ExperimentConfig", "KINDS", "load_config", "parse_config", "validate_config"]

KINDS = ("weak_homogeneous", "weak_perturbed", "strong", "hessian", "bands", "gaps")

_TOP = {"kind", "seed", "n_atoms", "kgrid", "hopping_scale", "output_dir"}
_SECTIONS = {
    "gaps": {"gap_plus", "gap_minus"},
    "model": {"c1", "c2", "a", "b", "d"},
    "fit": {"floor", "window"},
    "perturbation": {"eps_list", "norm_kind", "decay_exponent"},
    "strong": {"observe_site"},
    "hessian": {"probe", "step"},
}
_ALLOWED = {
    "weak_homogeneous": {"gaps", "fit"},
    "weak_perturbed": {"gaps", "fit", "perturbation"},
    "strong": {"gaps", "fit", "strong"},
    "hessian": {"gaps", "fit", "hessian"},
    "bands": {"gaps", "model"},
    "gaps": {"gaps", "model"},
}
MIN_ATOMS = 4


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    seed: int = 0
    n_atoms: int = 100
    kgrid: int = 1024
    hopping_scale: float = 0.5
    output_dir: Optional[str] = None
    gap_plus: Any = None
    gap_minus: Any = None
    model: Optional[ToyChainParams] = None
    floor: float = 1e-13
    window: Optional[Tuple[float, float]] = None
    eps_list: Tuple[float, ...] = ()
    norm_kind: str = "max"
    decay_exponent: float = 2.0
    observe_site: int = 0
    probe: Optional[int] = None
    step: float = 1e-4

    def gap_pairs(self) -> List[Tuple[float, float]]:
        """``(gap_plus, gap_minus)`` for every entry of the sweep, in input order."""
        if self.gap_plus is None or self.gap_minus is None:
            return []
        gp, gm = self.gap_plus, self.gap_minus
        if isinstance(gp, tuple):
            return [(g, gm) for g in gp]
        if isinstance(gm, tuple):
            return [(gp, g) for g in gm]
        return [(gp, gm)]

    def to_dict(self) -> dict:
        out = asdict(self)
        if self.model is not None:
            out["model"] = self.model.as_dict()
        return out


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _num_or_list(v, name: str, issues: List[str]):
    if _is_num(v):
        return float(v)
    if isinstance(v, list) and v and all(_is_num(x) for x in v):
        return tuple(float(x) for x in v)
    issues.append(f"type: {name} must be a number or a non-empty list of numbers")
    return None


def parse_config(data: Dict[str, Any]) -> Tuple[Optional[ExperimentConfig], List[str]]:
    """Map a decoded TOML document to an :class:`ExperimentConfig` plus a list of issues."""
    issues: List[str] = []
    kind = data.get("kind")
    if kind not in KINDS:
        issues.append(f"kind: expected one of {', '.join(KINDS)}, got {kind!r}")
        return None, issues
    kw: Dict[str, Any] = {"kind": kind}
    if kind == "strong":
        kw["n_atoms"] = 200
    for key, value in data.items():
        if isinstance(value, dict):
            if key not in _SECTIONS:
                issues.append(f"unknown section [{key}]")
            elif key not in _ALLOWED[kind]:
                issues.append(f"section [{key}] is not used by kind {kind!r}")
            else:
                for sub in value:
                    if sub not in _SECTIONS[key]:
                        issues.append(f"unknown key {key}.{sub}")
        elif key not in _TOP:
            issues.append(f"unknown key {key!r}")
    if issues:
        return None, issues

    for key in ("seed", "n_atoms", "kgrid"):
        if key in data:
            if not _is_int(data[key]):
                issues.append(f"type: {key} must be an integer")
            else:
                kw[key] = data[key]
    if "hopping_scale" in data:
        if not _is_num(data["hopping_scale"]):
            issues.append("type: hopping_scale must be a number")
        else:
            kw["hopping_scale"] = float(data["hopping_scale"])
    if "output_dir" in data:
        if not isinstance(data["output_dir"], str):
            issues.append("type: output_dir must be a string")
        else:
            kw["output_dir"] = data["output_dir"]

    gaps = data.get("gaps", {})
    for key in ("gap_plus", "gap_minus"):
        if key in gaps:
            kw[key] = _num_or_list(gaps[key], f"gaps.{key}", issues)

    model = data.get("model")
    if model is not None:
        try:
            kw["model"] = ToyChainParams(
                float(model["c1"]), float(model["c2"]),
                tuple(float(x) for x in model["a"]), tuple(float(x) for x in model["b"]),
                tuple(float(x) for x in model.get("d", (0.5, 0.5, 0.5))),
            )
        except (KeyError, TypeError, ValueError) as exc:
            issues.append(f"model: {exc}")

    fit = data.get("fit", {})
    if "floor" in fit:
        if not _is_num(fit["floor"]):
            issues.append("type: fit.floor must be a number")
        else:
            kw["floor"] = float(fit["floor"])
    if "window" in fit:
        w = fit["window"]
        if not (isinstance(w, list) and len(w) == 2 and all(_is_num(x) for x in w)):
            issues.append("type: fit.window must be [r_min, r_max]")
        else:
            kw["window"] = (float(w[0]), float(w[1]))

    pert = data.get("perturbation", {})
    if "eps_list" in pert:
        e = _num_or_list(pert["eps_list"], "perturbation.eps_list", issues)
        if e is not None:
            kw["eps_list"] = e if isinstance(e, tuple) else (e,)
    if "norm_kind" in pert:
        kw["norm_kind"] = pert["norm_kind"]
    if "decay_exponent" in pert:
        if not _is_num(pert["decay_exponent"]):
            issues.append("type: perturbation.decay_exponent must be a number")
        else:
            kw["decay_exponent"] = float(pert["decay_exponent"])

    strong = data.get("strong", {})
    if "observe_site" in strong:
        if not _is_int(strong["observe_site"]):
            issues.append("type: strong.observe_site must be an integer")
        else:
            kw["observe_site"] = strong["observe_site"]
    hess = data.get("hessian", {})
    if "probe" in hess:
        if not _is_int(hess["probe"]):
            issues.append("type: hessian.probe must be an integer")
        else:
            kw["probe"] = hess["probe"]
    if "step" in hess:
        if not _is_num(hess["step"]):
            issues.append("type: hessian.step must be a number")
        else:
            kw["step"] = float(hess["step"])

    if issues:
        return None, issues
    return ExperimentConfig(**kw), []


def _check_values(cfg: ExperimentConfig) -> List[str]:
    issues = []
    if cfg.seed < 0 or cfg.seed >= 2**64:
        issues.append("range: seed must be in [0, 2^64)")
    if cfg.n_atoms < MIN_ATOMS:
        issues.append(f"size: n_atoms must be at least {MIN_ATOMS}, got {cfg.n_atoms}")
    if cfg.kgrid < 4:
        issues.append(f"size: kgrid must be at least 4, got {cfg.kgrid}")
    if not cfg.hopping_scale > 0:
        issues.append("range: hopping_scale must be positive")
    if not cfg.floor >= 0:
        issues.append("range: fit.floor must be non-negative")
    if cfg.window is not None and not 0 <= cfg.window[0] < cfg.window[1]:
        issues.append("range: fit.window must satisfy 0 <= r_min < r_max")

    needs_gaps = cfg.kind not in ("bands", "gaps") or cfg.model is None
    if cfg.kind in ("bands", "gaps") and cfg.model is not None and cfg.gap_plus is not None:
        issues.append("model: give either [gaps] or [model], not both")
    if needs_gaps:
        if cfg.gap_plus is None or cfg.gap_minus is None:
            issues.append("gaps: gap_plus and gap_minus are required")
        else:
            gp_list, gm_list = isinstance(cfg.gap_plus, tuple), isinstance(cfg.gap_minus, tuple)
            sweep_ok = {"weak_homogeneous": not (gp_list and gm_list), "strong": not gp_list}
            if not sweep_ok.get(cfg.kind, not (gp_list or gm_list)):
                issues.append(f"gaps: list values are not allowed here for kind {cfg.kind!r}")
            for gp, gm in _pairs(cfg):
                if not (gp > 0 and gm > 0):
                    issues.append(f"range: gaps must be positive, got ({gp}, {gm})")
                elif gm > gp:
                    issues.append(f"ordering: gap_minus {gm} exceeds gap_plus {gp}")
    if cfg.kind == "weak_perturbed":
        if not cfg.eps_list:
            issues.append("perturbation: eps_list is required")
        elif any(not e > 0 for e in cfg.eps_list):
            issues.append("range: perturbation.eps_list entries must be positive")
        if cfg.norm_kind not in ("max", "l2_upsilon"):
            issues.append(f"perturbation: norm_kind must be 'max' or 'l2_upsilon', got {cfg.norm_kind!r}")
        if not cfg.decay_exponent > 1:
            issues.append("range: perturbation.decay_exponent must exceed the dimension 1")
    if cfg.kind == "strong" and not 0 <= cfg.observe_site < cfg.n_atoms:
        issues.append("range: strong.observe_site out of range")
    if cfg.kind == "hessian":
        if cfg.probe is not None and not 0 <= cfg.probe < cfg.n_atoms:
            issues.append("range: hessian.probe out of range")
        if not cfg.step > 0:
            issues.append("range: hessian.step must be positive")
    return issues


def _pairs(cfg: ExperimentConfig):
    gp = cfg.gap_plus if isinstance(cfg.gap_plus, tuple) else (cfg.gap_plus,)
    gm = cfg.gap_minus if isinstance(cfg.gap_minus, tuple) else (cfg.gap_minus,)
    return [(p, m) for p in gp for m in gm]


def _feasibility(cfg: ExperimentConfig) -> List[str]:
    from .bloch import solve_params_for_gaps
    from .errors import NearsightError

    issues = []
    for gp, gm in cfg.gap_pairs():
        try:
            solve_params_for_gaps(gp, gm, hopping_scale=cfg.hopping_scale, kgrid=cfg.kgrid)
        except NearsightError as exc:
            issues.append(f"feasibility: gap pair ({gp}, {gm}) not reachable: {exc}")
    return issues


def validate_config(cfg: ExperimentConfig, *, probe_solver: bool = True) -> List[str]:
    issues = _check_values(cfg)
    if not issues and probe_solver:
        issues = _feasibility(cfg)
    return issues


def read_toml(path) -> Dict[str, Any]:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc


def config_issues(path) -> List[str]:
    """Every problem found in the file at ``path``, including solver feasibility."""
    try:
        data = read_toml(path)
    except ConfigError as exc:
        return [str(exc)]
    cfg, issues = parse_config(data)
    if cfg is None:
        return issues
    return validate_config(cfg)


def load_config(path, *, seed: Optional[int] = None) -> ExperimentConfig:
    """Parse and validate ``path``; raise :class:`ConfigError` listing every issue."""
    cfg, issues = parse_config(read_toml(path))
    if cfg is not None and seed is not None:
        cfg = replace(cfg, seed=seed)
    if cfg is not None:
        issues = _check_values(cfg)
    if issues:
        raise ConfigError("; ".join(issues))
    return cfg
