"""Command line runner: ``otl gen|decompose|census|kacrice|events|probcheck``.

Configuration is resolved as command defaults < ``--config`` JSON file <
``key=value`` overrides < explicit flags. Dotted keys reach nested sections,
e.g. ``thresholds.delta=0.2``. Each run writes into
``<out>/<command>-<run id>/`` where the run id hashes the resolved config.
Result files hold only deterministic content; the wall time goes to
``timing.json`` so every other file is bit-identical on a re-run.

Exit status: 0 on success, 2 when a bound check reports a violation (the
findings are listed in the result JSON), 1 on bad input.
"""
import argparse
import copy
import hashlib
import json
import math
import os
import sys
import time

import numpy as np

from . import __version__
from .rng import make_rng
from .tensor_core import (sample_components, write_components, read_components,
                          correlations, eval_objective)
from .sphere_optimizer import OptimizerConfig, recover_all, basin_census, best_of_init
from .landscape_probe import (EventThresholds, classify_events, superlevel_membership,
                              rip_check, concentration_sweep)
from .kac_rice_mc import (ConditionalSpec, estimate_h_expectation, estimate_W_log,
                          psd_probability, mc_trace_moments, planted_alpha, _jsonable)
from .prob_toolkit import run_suite, C_MOM, ZETA_P, C6_DEFAULT, QUOTED_NU_SQ

COMMANDS = ("gen", "decompose", "census", "kacrice", "events", "probcheck")

_THRESH = {"delta": 0.1, "gamma": 10.0, "K": 1.0, "C": 20.0, "zeta": 0.1, "c_P": 10.0}
_OPT = {"method": "power", "step_size": None, "max_iters": 5000, "grad_tol": None,
        "eig_tol": 0.0, "perturb_scale": 1e-3, "perturb_every": 50, "init_probes": 1,
        "zeta": 0.1, "gamma": 10.0, "deflation": False}
_CONV = {"density": "exact", "surface": "surface", "e0_moment": "sixth"}

DEFAULTS = {
    "gen": {"d": 20, "n": 40},
    "decompose": {"input": None, "budgets": {"restarts": None}, "optimizer": _OPT},
    "census": {"input": None, "budgets": {"restarts": 1000}, "optimizer": _OPT},
    "kacrice": {"what": "h", "d": 6, "n": 60, "mode": "direct", "planted": True,
                "require_preconditions": False, "apply_events": True, "p": 2,
                "epsilon": 0.1,
                "budgets": {"n_samples": 10000, "n_alpha": 200, "n_matrix": 200},
                "thresholds": _THRESH, "conventions": _CONV},
    "events": {"input": None, "x": "random", "rip_k": None, "rip_delta": 0.5,
               "sweep_tau": 2.0, "budgets": {"n_samples": 100, "rip_trials": 100},
               "thresholds": _THRESH, "conventions": {"e0_moment": "sixth"}},
    "probcheck": {"tau": 1000000.0, "budgets": {"n_samples": 1000000}},
}


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _set_dotted(cfg, key, value):
    parts = key.split(".")
    node = cfg
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            raise ConfigError(f"unknown config section {p!r} in {key!r}")
        node = node[p]
    if parts[-1] not in node:
        raise ConfigError(f"unknown config key {key!r}")
    node[parts[-1]] = value


def _merge(base, upd, prefix=""):
    for k, v in upd.items():
        if k not in base:
            raise ConfigError(f"unknown config key {prefix + k!r}")
        if isinstance(base[k], dict) and isinstance(v, dict):
            _merge(base[k], v, prefix + k + ".")
        else:
            base[k] = v


def resolve_workers(flag):
    if flag is not None:
        return int(flag)
    env = os.environ.get("OTL_WORKERS")
    if env:
        return int(env)
    return os.cpu_count() or 1


def resolve_config(command, config_file=None, overrides=(), seed=None, workers=None):
    """Build the resolved configuration dict for ``command``."""
    cfg = copy.deepcopy(DEFAULTS[command])
    cfg["seed"] = 0
    if config_file:
        with open(config_file, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        data = {k: v for k, v in data.items() if k not in ("command", "workers")}
        _merge(cfg, data)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        k, v = item.split("=", 1)
        _set_dotted(cfg, k.strip(), _parse_value(v.strip()))
    if seed is not None:
        cfg["seed"] = int(seed)
    cfg["workers"] = resolve_workers(workers)
    cfg["command"] = command
    _validate(cfg)
    return cfg


def _validate(cfg):
    cmd = cfg["command"]
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError("seed must be a non-negative integer")
    if cfg["workers"] < 1:
        raise ConfigError("workers must be >= 1")
    if cmd in ("gen", "kacrice"):
        if not isinstance(cfg["d"], int) or cfg["d"] < 2:
            raise ConfigError(f"d must be an integer >= 2, got {cfg['d']!r}")
        if not isinstance(cfg["n"], int) or cfg["n"] < 1:
            raise ConfigError(f"n must be an integer >= 1, got {cfg['n']!r}")
    if cmd in ("decompose", "census", "events") and not cfg["input"]:
        raise ConfigError(f"{cmd} needs input=<component csv>")
    for k, v in cfg.get("budgets", {}).items():
        if v is not None and (not isinstance(v, int) or isinstance(v, bool) or v < 1):
            raise ConfigError(f"budgets.{k} must be a positive integer, got {v!r}")
    if cmd == "census" and cfg["budgets"]["restarts"] is None:
        raise ConfigError("census needs budgets.restarts")
    if "optimizer" in cfg:
        try:
            _optimizer(cfg)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"optimizer: {exc}") from exc
    if "thresholds" in cfg:
        try:
            _thresholds(cfg)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"thresholds: {exc}") from exc
    if cmd == "kacrice" and cfg["what"] not in ("h", "W", "psd", "trace"):
        raise ConfigError("kacrice what must be one of h, W, psd, trace")


def run_id(cfg):
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _thresholds(cfg):
    return EventThresholds(e0_moment=cfg["conventions"]["e0_moment"], **cfg["thresholds"])


def _optimizer(cfg):
    o = dict(cfg["optimizer"])
    return OptimizerConfig(**o)


def _dump(path, obj):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _header(cfg):
    return {"config": cfg, "version": __version__, "seed": cfg["seed"],
            "run_id": run_id(cfg),
            "constants": {"c_mom": C_MOM, "zeta_p": ZETA_P, "c6": C6_DEFAULT,
                          "quoted_nu_sq": QUOTED_NU_SQ}}


# --- commands --------------------------------------------------------------

def cmd_gen(cfg, outdir):
    A = sample_components(cfg["d"], cfg["n"], cfg["seed"])
    path = os.path.join(outdir, "components.csv")
    write_components(path, A)
    return {"files": ["components.csv"]}, []


def cmd_decompose(cfg, outdir):
    A = read_components(cfg["input"])
    res = recover_all(A, _optimizer(cfg), cfg["seed"], budget=cfg["budgets"]["restarts"],
                      workers=cfg["workers"])
    best = {}
    for p in res.found:
        if p.index not in best or p.correlation > best[p.index].correlation:
            best[p.index] = p
    with open(os.path.join(outdir, "recovery.csv"), "w", encoding="ascii", newline="\n") as fh:
        fh.write("index,covered,sign,correlation,distance,f_value\n")
        for i in range(A.n):
            if i in best:
                p = best[i]
                fh.write(f"{i},{int(i in res.covered)},{p.sign},{p.correlation!r},"
                         f"{p.distance!r},{p.f_value!r}\n")
            else:
                fh.write(f"{i},0,0,nan,nan,nan\n")
    out = dict(_header(cfg), result=res.to_dict())
    _dump(os.path.join(outdir, "recovery.json"), out)
    return {"files": ["recovery.json", "recovery.csv"]}, []


def cmd_census(cfg, outdir):
    A = read_components(cfg["input"])
    res = basin_census(A, cfg["budgets"]["restarts"], _optimizer(cfg), cfg["seed"], cfg["workers"])
    res.to_csv(os.path.join(outdir, "census.csv"))
    _dump(os.path.join(outdir, "census.json"), dict(_header(cfg), summary=res.summary()))
    return {"files": ["census.csv", "census.json"]}, []


def _alpha_for(cfg, th):
    if cfg["planted"]:
        return planted_alpha(cfg["n"], cfg["d"], th, cfg["seed"])[0]
    return make_rng(cfg["seed"], "kacrice-alpha").standard_normal(cfg["n"])


def cmd_kacrice(cfg, outdir):
    th = _thresholds(cfg)
    conv = cfg["conventions"]
    findings = []
    what = cfg["what"]
    b = cfg["budgets"]
    if what == "h":
        est = estimate_h_expectation(cfg["d"], cfg["n"], th, b["n_alpha"], b["n_matrix"],
                                     cfg["seed"], cfg["mode"], conv["density"],
                                     conv["surface"], workers=cfg["workers"],
                                     apply_events=cfg["apply_events"])
        body = est.to_dict()
    elif what == "W":
        a = _alpha_for(cfg, th)
        est = estimate_W_log(a, cfg["d"], th, b["n_samples"], cfg["seed"], cfg["mode"],
                             density=conv["density"], surface=conv["surface"],
                             apply_events=cfg["apply_events"])
        body = est.to_dict()
        if est.amgm_violations:
            findings.append({"check": "amgm", "violations": est.amgm_violations})
    elif what == "psd":
        a = _alpha_for(cfg, th)
        rep = psd_probability(a, cfg["d"], th, b["n_samples"], cfg["seed"],
                              require_preconditions=cfg["require_preconditions"])
        body = rep.to_dict()
        body["events"] = classify_events(a, th, cfg["d"]).to_dict()
        if rep.verdict == "violated":
            findings.append({"check": "psd-probability", "p_hat": rep.p_hat,
                             "ci": [rep.ci_low, rep.ci_high], "bound": rep.bound})
    else:
        a = _alpha_for(cfg, th)
        rep = mc_trace_moments(ConditionalSpec(a, a, cfg["d"]), cfg["p"], b["n_samples"],
                               cfg["seed"], cfg["epsilon"])
        body = rep.to_dict()
        if not rep.holds:
            findings.append({"check": "trace-moment", "log_estimate": rep.log_estimate,
                             "log_bound": rep.log_bound})
    _dump(os.path.join(outdir, "estimate.json"),
          dict(_header(cfg), estimate=body, findings=findings))
    return {"files": ["estimate.json"]}, findings


def cmd_events(cfg, outdir):
    A = read_components(cfg["input"])
    th = _thresholds(cfg)
    src = str(cfg["x"])
    if src == "random":
        v = make_rng(cfg["seed"], "events-x").standard_normal(A.d)
        x = v / np.linalg.norm(v)
    elif src.startswith("component:"):
        k = int(src.split(":", 1)[1])
        if not 0 <= k < A.n:
            raise ConfigError(f"component index {k} out of range")
        x = A.unit_columns[:, k]
    elif src == "best":
        p = best_of_init(A, 200, -1.0, cfg["seed"])
        x = p.x
    else:
        raise ConfigError("x must be 'random', 'best' or 'component:<k>'")
    prof = correlations(A, x)
    ev = classify_events(prof, th, A.d)
    in_L, in_L1, in_L2 = superlevel_membership(A, x, th)
    k = cfg["rip_k"] or max(1, int(A.d / math.log(max(A.n, 3))))
    b = cfg["budgets"]
    rip = rip_check(A, min(k, A.d, A.n), cfg["rip_delta"], b["rip_trials"], cfg["seed"])
    sweeps = {str(deg): concentration_sweep(A, cfg["sweep_tau"], b["n_samples"],
                                            cfg["seed"], deg).to_dict()
              for deg in (4, 3, 2)}
    for s in sweeps.values():
        s.pop("statistics")
    body = {"x": [float(t) for t in x], "f_value": eval_objective(A, x),
            "events": ev.to_dict(), "in_L": in_L, "in_L1": in_L1, "in_L2": in_L2,
            "rip": rip.to_dict(), "sweeps": sweeps}
    _dump(os.path.join(outdir, "events.json"), dict(_header(cfg), result=body))
    return {"files": ["events.json"]}, []


def cmd_probcheck(cfg, outdir):
    reps = run_suite(cfg["budgets"]["n_samples"], cfg["seed"], float(cfg["tau"]))
    findings = [r.to_dict() for r in reps if r.verdict == "violated"]
    _dump(os.path.join(outdir, "probcheck.json"),
          dict(_header(cfg), reports=[r.to_dict() for r in reps], findings=findings))
    return {"files": ["probcheck.json"]}, findings


_DISPATCH = {"gen": cmd_gen, "decompose": cmd_decompose, "census": cmd_census,
             "kacrice": cmd_kacrice, "events": cmd_events, "probcheck": cmd_probcheck}


def _sha(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def run(command, cfg, out):
    """Execute a resolved config; returns (run directory, findings)."""
    rid = run_id(cfg)
    outdir = os.path.join(out, f"{command}-{rid}")
    os.makedirs(outdir, exist_ok=True)
    t0 = time.perf_counter()
    info, findings = _DISPATCH[command](cfg, outdir)
    wall = time.perf_counter() - t0
    manifest = dict(_header(cfg), files={f: _sha(os.path.join(outdir, f))
                                         for f in info["files"]},
                    n_findings=len(findings))
    _dump(os.path.join(outdir, "manifest.json"), manifest)
    _dump(os.path.join(outdir, "timing.json"), {"run_id": rid, "wall_time_s": wall})
    return outdir, findings


def build_parser():
    p = _Parser(prog="otl", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"otl {__version__}")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", default="runs", help="output directory (default ./runs)")
    p.add_argument("overrides", nargs="*", metavar="key=value")
    return p


def main(argv=None):
    args = build_parser().parse_intermixed_args(argv)
    try:
        cfg = resolve_config(args.command, args.config, args.overrides, args.seed, args.workers)
        outdir, findings = run(args.command, cfg, args.out)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"otl {args.command}: error: {exc}", file=sys.stderr)
        return 1
    print(outdir)
    if findings:
        print(f"{len(findings)} finding(s); see {outdir}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
