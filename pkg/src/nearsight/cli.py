"""Command-line experiment runner.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import shutil
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .bloch import band_structure, chain_base, compute_gaps, solve_params_for_gaps
from .config import ExperimentConfig, config_issues, load_config
from .errors import ConfigError, NearsightError
from .io import atomic_write_text, csv_text, to_json
from .lattice import build_chain
from .locality import (
    DecayProfile,
    energy_hessian_fd,
    fit_exponential_rate,
    perturbed_locality_experiment,
    strong_locality_experiment,
    weak_locality_experiment,
)
from .tightbinding import ToyChainParams, toy_model

__all__ = ["main", "run_experiment", "OUT_ENV", "PROFILE_COLUMNS"]

OUT_ENV = "NEARSIGHT_OUT"
DEFAULT_OUT = "nearsight-out"
PROFILE_COLUMNS = ("experiment_id", "gap_minus", "gap_plus", "epsilon", "norm_kind", "seed", "r", "magnitude")


@dataclass
class Record:
    """One profile destined for its own CSV, with the fit and parameters behind it."""

    experiment_id: str
    gap_minus: float
    gap_plus: float
    epsilon: Optional[float]
    norm_kind: str
    profile: DecayProfile
    fit: Optional[dict]
    params: ToyChainParams
    extra: dict = field(default_factory=dict)


@dataclass
class Outcome:
    records: List[Record] = field(default_factory=list)
    files: Dict[str, str] = field(default_factory=dict)
    summary: dict = field(default_factory=dict)


def _fit_dict(fit):
    return None if fit is None else fit.to_dict()


# --- per-entry jobs (top-level so they can be sent to worker processes) ------------------


def _job_weak(cfg: ExperimentConfig, index: int, gp: float, gm: float) -> List[Record]:
    r = weak_locality_experiment("gap_plus", gp, [gm], cfg.n_atoms, cfg.kgrid,
                                 hopping_scale=cfg.hopping_scale, floor=cfg.floor, window=cfg.window)[0]
    return [Record(f"weak_{index:03d}", gm, gp, None, "", r.profile, _fit_dict(r.fit), r.params)]


def _job_strong(cfg: ExperimentConfig, index: int, gp: float, gm: float) -> List[Record]:
    r = strong_locality_experiment([gm], gp, cfg.n_atoms, observe_site=cfg.observe_site, kgrid=cfg.kgrid,
                                   hopping_scale=cfg.hopping_scale, floor=cfg.floor, window=cfg.window)[0]
    return [Record(f"strong_{index:03d}", gm, gp, None, "", r.profile, _fit_dict(r.fit), r.params)]


def _job_perturbed(cfg: ExperimentConfig, index: int, gp: float, gm: float) -> List[Record]:
    e = perturbed_locality_experiment(gm, gp, cfg.eps_list, cfg.norm_kind, cfg.n_atoms, cfg.seed,
                                      kgrid=cfg.kgrid, hopping_scale=cfg.hopping_scale,
                                      decay_exponent=cfg.decay_exponent, floor=cfg.floor)
    out = [Record("perturbed_ref", gm, gp, 0.0, cfg.norm_kind, e.homogeneous, _fit_dict(e.homogeneous_fit),
                  e.params)]
    for i, r in enumerate(e.results):
        extra = {"crossover_radius": r.crossover}
        out.append(Record(f"perturbed_{i:03d}_full", gm, gp, r.epsilon, cfg.norm_kind, r.profile,
                          _fit_dict(r.far_field_fit), e.params, extra))
        try:
            diff_fit = _fit_dict(fit_exponential_rate(r.difference, cfg.floor))
        except NearsightError:
            diff_fit = None
        out.append(Record(f"perturbed_{i:03d}_diff", gm, gp, r.epsilon, cfg.norm_kind, r.difference,
                          diff_fit, e.params, extra))
    return out


def _job_hessian(cfg: ExperimentConfig, index: int, gp: float, gm: float) -> List[Record]:
    params = solve_params_for_gaps(gp, gm, hopping_scale=cfg.hopping_scale, kgrid=cfg.kgrid)
    lat = build_chain(cfg.n_atoms)
    probe = lat.center_site if cfg.probe is None else cfg.probe
    h = energy_hessian_fd(toy_model(params), lat, probe, cfg.step)
    prof = h.profile(lat)
    fit = fit_exponential_rate(prof, cfg.floor, cfg.window)
    return [Record("hessian_000", gm, gp, None, "", prof, _fit_dict(fit), params, {"probe": probe})]


_JOBS: Dict[str, Callable] = {
    "weak_homogeneous": _job_weak,
    "weak_perturbed": _job_perturbed,
    "strong": _job_strong,
    "hessian": _job_hessian,
}


def _call(args):
    fn, cfg, i, gp, gm = args
    return fn(cfg, i, gp, gm)


def _profile_csv(rec: Record, seed: int) -> str:
    rows = ((rec.experiment_id, rec.gap_minus, rec.gap_plus, rec.epsilon, rec.norm_kind, seed, r, m)
            for r, m in zip(rec.profile.distances, rec.profile.magnitudes))
    return csv_text(PROFILE_COLUMNS, rows)


def _solver_report(params: ToyChainParams, kgrid: int) -> dict:
    return compute_gaps(band_structure(toy_model(params), chain_base(), kgrid)).to_dict()


def _band_params(cfg: ExperimentConfig) -> ToyChainParams:
    if cfg.model is not None:
        return cfg.model
    return solve_params_for_gaps(cfg.gap_plus, cfg.gap_minus, hopping_scale=cfg.hopping_scale, kgrid=cfg.kgrid)


def run_experiment(cfg: ExperimentConfig, jobs: int = 1) -> Outcome:
    """Execute ``cfg`` and return the text of every output file, keyed by relative path."""
    out = Outcome()
    if cfg.kind in ("bands", "gaps"):
        params = _band_params(cfg)
        bs = band_structure(toy_model(params), chain_base(), cfg.kgrid)
        report = compute_gaps(bs).to_dict()
        if cfg.kind == "bands":
            out.files["bands.csv"] = bs.to_csv()
        out.files["gaps.json"] = to_json(report)
        out.summary = {"entries": [{"params": params.as_dict(), "solver": report}]}
        return out

    fn = _JOBS[cfg.kind]
    tasks = [(fn, cfg, i, gp, gm) for i, (gp, gm) in enumerate(cfg.gap_pairs())]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            batches = list(pool.map(_call, tasks))
    else:
        batches = [_call(t) for t in tasks]
    out.records = [rec for batch in batches for rec in batch]

    fits, entries, seen = {}, [], {}
    for rec in out.records:
        out.files[f"profiles/{rec.experiment_id}.csv"] = _profile_csv(rec, cfg.seed)
        fits[rec.experiment_id] = {"gap_minus": rec.gap_minus, "gap_plus": rec.gap_plus,
                                   "epsilon": rec.epsilon, "fit": rec.fit, **rec.extra}
        key = (rec.gap_plus, rec.gap_minus)
        if key not in seen:
            seen[key] = True
            entries.append({"gap_plus": rec.gap_plus, "gap_minus": rec.gap_minus,
                            "params": rec.params.as_dict(), "solver": _solver_report(rec.params, cfg.kgrid)})
    out.files["fits.json"] = to_json(fits)
    out.summary = {"entries": entries}
    return out


def _manifest(cfg: ExperimentConfig, outcome: Outcome) -> str:
    config = cfg.to_dict()
    config.pop("output_dir", None)
    files = {name: hashlib.sha256(text.encode()).hexdigest() for name, text in sorted(outcome.files.items())}
    return to_json({
        "tool": "nearsight",
        "version": __version__,
        "numpy_version": np.__version__,
        "seed": cfg.seed,
        "config": config,
        **outcome.summary,
        "files": files,
    })


def write_outputs(out_dir: Path, files: Dict[str, str]) -> List[Path]:
    """Stage every file in a scratch directory, then move each into place atomically.

    If anything fails the scratch directory is removed and ``out_dir`` is
    left as it was (a directory created here is removed again).
    """
    created = not out_dir.exists()
    out_dir.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=".staging-", dir=out_dir))
    moved: List[Path] = []
    try:
        for name, text in files.items():
            atomic_write_text(stage / name, text)
        for name in files:
            target = out_dir / name
            target.parent.mkdir(parents=True, exist_ok=True)
            os.replace(stage / name, target)
            moved.append(target)
    except BaseException:
        shutil.rmtree(stage, ignore_errors=True)
        if created:
            shutil.rmtree(out_dir, ignore_errors=True)
        else:
            for p in moved:
                p.unlink(missing_ok=True)
        raise
    shutil.rmtree(stage, ignore_errors=True)
    return moved


def _resolve_out(cli_out: Optional[str], cfg: ExperimentConfig) -> Path:
    return Path(cli_out or os.environ.get(OUT_ENV) or cfg.output_dir or DEFAULT_OUT)


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config, seed=args.seed)
    except ConfigError as exc:
        _err(str(exc))
        return 2
    out_dir = _resolve_out(args.out, cfg)
    try:
        outcome = run_experiment(cfg, jobs=args.jobs)
        outcome.files["manifest.json"] = _manifest(cfg, outcome)
        write_outputs(out_dir, outcome.files)
    except NearsightError as exc:
        _err(f"{type(exc).__name__}: {exc}")
        return 1
    except OSError as exc:
        _err(str(exc))
        return 1
    print(f"wrote {len(outcome.files)} files to {out_dir}")
    return 0


def cmd_validate(args) -> int:
    issues = config_issues(args.config)
    for issue in issues:
        print(issue)
    if not issues:
        print("ok")
    return 2 if issues else 0


def _adhoc_config(args, kind: str) -> ExperimentConfig:
    if args.config:
        cfg = load_config(args.config)
        if cfg.kind not in ("bands", "gaps"):
            raise ConfigError(f"config kind must be 'bands' or 'gaps', got {cfg.kind!r}")
        return replace(cfg, kind=kind)
    if args.gap_plus is None or args.gap_minus is None:
        raise ConfigError("give --config or both --gap-plus and --gap-minus")
    if not 0 < args.gap_minus <= args.gap_plus:
        raise ConfigError(f"need 0 < gap_minus <= gap_plus, got ({args.gap_plus}, {args.gap_minus})")
    if args.kgrid < 4:
        raise ConfigError("kgrid must be at least 4")
    return ExperimentConfig(kind=kind, kgrid=args.kgrid, hopping_scale=args.hopping_scale,
                            gap_plus=args.gap_plus, gap_minus=args.gap_minus)


def _cmd_spectrum(args, kind: str) -> int:
    try:
        cfg = _adhoc_config(args, kind)
    except ConfigError as exc:
        _err(str(exc))
        return 2
    try:
        outcome = run_experiment(cfg)
        if args.out:
            outcome.files["manifest.json"] = _manifest(cfg, outcome)
            write_outputs(Path(args.out), outcome.files)
        else:
            sys.stdout.write(outcome.files["bands.csv" if kind == "bands" else "gaps.json"])
    except (NearsightError, OSError) as exc:
        _err(f"{type(exc).__name__}: {exc}")
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nearsight", description="Locality experiments on tight-binding chains.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def seed(text):
        v = int(text)
        if not 0 <= v < 2**64:
            raise argparse.ArgumentTypeError("seed must be in [0, 2^64)")
        return v

    def positive(text):
        v = int(text)
        if v < 1:
            raise argparse.ArgumentTypeError("must be a positive integer")
        return v

    p = sub.add_parser("run", help="run an experiment config")
    p.add_argument("--config", required=True, help="TOML experiment config")
    p.add_argument("--out", help=f"output directory (overrides ${OUT_ENV} and the config)")
    p.add_argument("--seed", type=seed, help="override the config seed")
    p.add_argument("--jobs", type=positive, default=1, help="worker processes for sweep entries (default 1)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("validate", help="check a config without running it")
    p.add_argument("--config", required=True, help="TOML experiment config")
    p.set_defaults(func=cmd_validate)

    for name, helptext in (("bands", "print the band structure as CSV"), ("gaps", "print the gap report as JSON")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", help="config of kind 'bands' or 'gaps'")
        p.add_argument("--gap-plus", type=float, help="target indirect gap")
        p.add_argument("--gap-minus", type=float, help="target direct gap")
        p.add_argument("--kgrid", type=int, default=1024, help="Bloch grid size (default 1024)")
        p.add_argument("--hopping-scale", type=float, default=0.5, help="interband hopping at the unit bond")
        p.add_argument("--out", help="write files and a manifest here instead of printing")
        p.set_defaults(func=lambda a, k=name: _cmd_spectrum(a, k))
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
