"""Command-line front end: ``sparsebump {gen,constants,norm,verify,search,sweep}``.

Settings resolve as defaults < ``--config`` JSON file < explicit flags, and the
resolved settings plus a version string are embedded in every JSON artifact
and in a ``run.json`` manifest next to the outputs.  The exit code is 1 iff an
asserted inequality or invariant failed.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import __version__, analysis, operator, search, sweep, theorems
from .lattice import WEIGHT_LAWS, load_model, random_density, save_model, WeightedModel
from .sparse import PROFILES, generate_sparse, load_family, save_family

DEFAULTS = {
    "depth": 6,
    "seed": 0,
    "p": 2.0,
    "delta": analysis.DEFAULT_DELTA,
    "norm_method": "auto",
    "out": ".",
    "weight_law": "lognormal",
    "spike_power": None,
    "profile": "random",
    "model": None,
    "family": None,
    "restarts": operator.DEFAULT_RESTARTS,
    "which": ["sawyer", "theorem1", "theorem2", "plain_ap", "diagnostics"],
    "objective": "theorem1",
    "iterations": 500,
    "proposal": "cellwise-multiplicative",
    "family_mutation_rate": 0.0,
    "depths": list(sweep.DEFAULT_DEPTHS),
    "ps": list(sweep.DEFAULT_PS),
    "deltas": list(sweep.DEFAULT_DELTAS),
    "seeds": sweep.DEFAULT_SEEDS,
    "workers": 1,
    "calibration": None,
    "calibration_out": None,
}


_SHARED = ("depth", "seed", "p", "delta", "norm_method")
COMMAND_KEYS = {
    "gen": ("depth", "seed", "weight_law", "spike_power", "profile"),
    "constants": ("p", "delta", "model", "family"),
    "norm": ("p", "norm_method", "restarts", "seed", "model", "family"),
    "verify": ("p", "delta", "norm_method", "which", "model", "family"),
    "search": _SHARED + ("objective", "iterations", "proposal", "family_mutation_rate", "model", "family"),
    "sweep": ("norm_method", "depths", "ps", "deltas", "seeds", "calibration"),
}


def version_string() -> str:
    """Package version, suffixed with ``git describe`` output when available."""
    try:
        desc = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True, text=True,
                              cwd=Path(__file__).resolve().parent, timeout=5, check=True).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        desc = ""
    return f"{__version__}+{desc}" if desc else __version__


def resolve(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    if args.config:
        cfg.update(json.loads(Path(args.config).read_text()))
    for key, value in vars(args).items():
        if key in DEFAULTS and value is not None:
            cfg[key] = value
    cfg["command"] = args.command
    return cfg


def _meta(cfg: dict) -> dict:
    echoed = {k: cfg[k] for k in ("command",) + COMMAND_KEYS[cfg["command"]]}
    return {"config": echoed, "version": version_string()}


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")


def _outdir(cfg: dict) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_inputs(cfg: dict):
    if not cfg["model"] or not cfg["family"]:
        raise SystemExit("--model and --family are required")
    model = load_model(cfg["model"])
    return model, load_family(cfg["family"], model.depth)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen(cfg: dict) -> int:
    rng = np.random.default_rng(cfg["seed"])
    depth = cfg["depth"]
    w = random_density(depth, rng, cfg["weight_law"], spike_power=cfg["spike_power"])
    sigma = random_density(depth, rng, cfg["weight_law"], spike_power=cfg["spike_power"])
    model = WeightedModel(depth, w, sigma)
    family = generate_sparse(depth, cfg["seed"], cfg["profile"])
    out = _outdir(cfg)
    save_model(model, out / "model.json", extra=_meta(cfg))
    save_family(family, out / "family.json")
    _write_json(out / "run.json", _meta(cfg))
    print(f"wrote {out / 'model.json'} and {out / 'family.json'} ({len(family)} cubes)")
    return 0


def constants_payload(model, family, p: float, delta: float) -> dict:
    q = analysis.dual_exponent(p)
    T1, T2 = analysis.testing_constants(model, family, p)
    reports = {
        "entropy_w_sigma": analysis.entropy_bump_constant(model, p, analysis.entropy_bump(p, delta), "w_sigma"),
        "entropy_sigma_w": analysis.entropy_bump_constant(model, q, analysis.entropy_bump(q, delta), "sigma_w"),
        "direct_w_sigma": analysis.direct_bump_constant(model, p, analysis.direct_bump(p, delta), "w_sigma"),
        "direct_sigma_w": analysis.direct_bump_constant(model, q, analysis.direct_bump(q, delta), "sigma_w"),
        "plain_ap": analysis.ap_constant(model, p, "w_sigma"),
        "T1": T1,
        "T2": T2,
    }
    return {k: v.to_dict() for k, v in reports.items()}


def cmd_constants(cfg: dict) -> int:
    model, family = _load_inputs(cfg)
    payload = constants_payload(model, family, cfg["p"], cfg["delta"])
    payload.update(_meta(cfg))
    _write_json(_outdir(cfg) / "constants.json", payload)
    for k, v in payload.items():
        if isinstance(v, dict) and "value" in v:
            print(f"{k:16s} {v['value']:.10g}  at {v['witness']}")
    return 0


def cmd_norm(cfg: dict) -> int:
    model, family = _load_inputs(cfg)
    kwargs = {}
    if cfg["norm_method"] in ("ascent",) or (cfg["norm_method"] == "auto" and cfg["p"] != 2):
        kwargs = {"restarts": cfg["restarts"], "seed": cfg["seed"]}
    est = operator.norm(model, family, cfg["p"], method=cfg["norm_method"], **kwargs)
    payload = est.to_dict()
    payload.update(_meta(cfg))
    _write_json(_outdir(cfg) / "norm.json", payload)
    print(f"norm = {est.value:.12g} ({est.method}, converged={est.converged})")
    return 0 if est.converged else 1


def cmd_verify(cfg: dict) -> int:
    model, family = _load_inputs(cfg)
    reports = theorems.verify_all(model, family, cfg["p"], cfg["delta"], cfg["norm_method"],
                                  which=cfg["which"])
    meta = _meta(cfg)
    ok = True
    with open(_outdir(cfg) / "reports.jsonl", "w") as fh:
        for rep in reports:
            fh.write(json.dumps({**rep.to_dict(), **meta}, sort_keys=True) + "\n")
            ok &= rep.passed
            if rep.name in ("sawyer", "theorem1", "theorem2", "plain_ap") or not rep.passed:
                status = "ok" if rep.passed else "FAIL"
                print(f"{status:4s} {rep.name:10s} lhs={rep.lhs:.10g} rhs={rep.rhs:.10g} ratio={rep.ratio:.10g}")
    print(f"{len(reports)} reports, {'all held' if ok else 'FAILURES present'}")
    return 0 if ok else 1


def cmd_search(cfg: dict) -> int:
    conf = search.SearchConfig(objective=cfg["objective"], p=cfg["p"], delta=cfg["delta"], depth=cfg["depth"],
                               iterations=cfg["iterations"], seed=cfg["seed"], proposal=cfg["proposal"],
                               family_mutation_rate=cfg["family_mutation_rate"])
    model = family = None
    if cfg["model"] and cfg["family"]:
        model, family = _load_inputs(cfg)
    result = search.extremal_search(conf, model, family)
    out = _outdir(cfg)
    with open(out / "trace.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["iteration", "best_ratio"])
        writer.writerows((i, repr(r)) for i, r in result.trace)
    meta = _meta(cfg)
    save_model(result.best_model, out / "best_model.json", extra=meta)
    save_family(result.best_family, out / "best_family.json")
    _write_json(out / "search.json", {"best_ratio": result.best_ratio, "accepted": result.accepted,
                                      "rejected": result.rejected, **meta})
    print(f"best {cfg['objective']} ratio = {result.best_ratio:.10g}")
    return 0 if np.isfinite(result.best_ratio) else 1


def cmd_sweep(cfg: dict) -> int:
    grid = sweep.SweepGrid(depths=tuple(cfg["depths"]), ps=tuple(cfg["ps"]), deltas=tuple(cfg["deltas"]),
                           seeds=cfg["seeds"], norm_method=cfg["norm_method"])
    result = sweep.run_sweep(grid, workers=cfg["workers"])
    out = _outdir(cfg)
    (out / "summary.csv").write_text(result.to_csv())
    _write_json(out / "run.json", _meta(cfg))
    ok = result.passed
    failing = [r for r in result.rows if not r.passed]
    for r in failing[:20]:
        print(f"FAIL {r.inequality} depth={r.depth} seed={r.seed} p={r.p} ratio={r.ratio:.10g}")
    if cfg["calibration_out"] and result.rows:
        _write_json(Path(cfg["calibration_out"]), {
            "constants": result.calibration(),
            "provenance": {"grid": {"depths": list(grid.depths), "ps": list(grid.ps),
                                    "deltas": list(grid.deltas), "seeds": grid.seeds},
                           "norm_method": grid.norm_method, "delta": sweep.CALIBRATION_DELTA,
                           "version": version_string()},
        })
    if cfg["calibration"] and result.rows:
        frozen = json.loads(Path(cfg["calibration"]).read_text())["constants"]
        observed = result.calibration()
        for name, held in result.check_calibration(frozen).items():
            print(f"{'ok' if held else 'FAIL'} calibration {name}: {observed[name]:.10g} "
                  f"<= {frozen[name]:.10g}")
            ok &= held
    print(f"{len(result.rows)} rows, {'all held' if ok else 'FAILURES present'}")
    return 0 if ok else 1


COMMANDS = {"gen": cmd_gen, "constants": cmd_constants, "norm": cmd_norm,
            "verify": cmd_verify, "search": cmd_search, "sweep": cmd_sweep}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sparsebump", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, inputs=False):
        p.add_argument("--config", help="JSON file with settings (flags override)")
        p.add_argument("--depth", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--p", type=float)
        p.add_argument("--delta", type=float)
        p.add_argument("--norm-method", dest="norm_method", choices=operator.NORM_METHODS)
        p.add_argument("--out", help="output directory")
        p.add_argument("-v", "--verbose", action="store_true")
        if inputs:
            p.add_argument("--model", help="model JSON file")
            p.add_argument("--family", help="family JSON file")
        return p

    g = common(sub.add_parser("gen", help="generate a model and a sparse family"))
    g.add_argument("--weight-law", dest="weight_law", choices=WEIGHT_LAWS)
    g.add_argument("--spike-power", dest="spike_power", type=int)
    g.add_argument("--profile", choices=PROFILES)

    common(sub.add_parser("constants", help="bump, A_p and testing constants"), inputs=True)
    n = common(sub.add_parser("norm", help="operator norm"), inputs=True)
    n.add_argument("--restarts", type=int)
    v = common(sub.add_parser("verify", help="check the inequalities on one instance"), inputs=True)
    v.add_argument("--which", nargs="+", choices=["sawyer", "theorem1", "theorem2", "plain_ap", "diagnostics"])

    s = common(sub.add_parser("search", help="annealing search for extremal ratios"), inputs=True)
    s.add_argument("--objective", choices=search.OBJECTIVES)
    s.add_argument("--iterations", type=int)
    s.add_argument("--proposal", choices=search.PROPOSALS)
    s.add_argument("--family-mutation-rate", dest="family_mutation_rate", type=float)

    w = common(sub.add_parser("sweep", help="ensemble run over a parameter grid"))
    w.add_argument("--depths", type=int, nargs="+")
    w.add_argument("--ps", type=float, nargs="+")
    w.add_argument("--deltas", type=float, nargs="+")
    w.add_argument("--seeds", type=int, help="number of seeds per grid point (0.. seeds-1)")
    w.add_argument("--workers", type=int)
    w.add_argument("--calibration", help="frozen calibration JSON to assert against")
    w.add_argument("--calibration-out", dest="calibration_out", help="write calibration constants here")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    cfg = resolve(args)
    return COMMANDS[args.command](cfg)


if __name__ == "__main__":
    sys.exit(main())
