"""Command-line driver: ``transition-rmt {spectrum,xi,transition,verify,integral}``.

Each command reads an optional JSON config, applies flag overrides, validates
the result against a schema and writes self-describing output files.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import sys
import time
from pathlib import Path

import jsonschema
import numpy as np

from . import vwz
from .ensemble import EnsembleConfig, predict_case, run_ensemble
from .errors import DivergentIntegralError, InconsistentInput, InvalidArgument, NumericalFailure
from .goe import semicircle_density, stream
from .model import ChannelSpec, ModelSpec, build_realization
from .scattering import smatrix_direct, smatrix_factorized

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3

_CHANNEL = {
    "type": "object",
    "properties": {
        "t": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "v": {"type": "number", "exclusiveMinimum": 0},
        "count": {"type": "integer", "minimum": 1},
    },
    "additionalProperties": False,
    "oneOf": [{"required": ["t"]}, {"required": ["v"]}],
}

_MODEL = {
    "type": "object",
    "properties": {
        "kind": {"enum": ["tunneling", "transition_state"]},
        "n": {"type": "integer", "minimum": 1},
        "lambda": {"type": "number", "exclusiveMinimum": 0},
        "energy": {"type": "number"},
        "v_tilde": {"type": "number", "minimum": 0},
        "v1_tilde": {"type": "number", "minimum": 0},
        "v2_tilde": {"type": "number", "minimum": 0},
        "e0": {"type": "number"},
        "channels1": {"type": "array", "items": _CHANNEL},
        "channels2": {"type": "array", "items": _CHANNEL},
    },
    "required": ["kind", "n"],
    "additionalProperties": False,
}

SCHEMA = {
    "type": "object",
    "properties": {
        "model": _MODEL,
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "realizations": {"type": "integer", "minimum": 1},
        "workers": {"type": "integer", "minimum": 1},
        "batches": {"type": "integer", "minimum": 1},
        "estimators": {"type": "array", "items": {"enum": ["spectrum", "s_mean", "xi_stats",
                                                             "formation", "pab", "full_s"]}},
        "quadrature": {
            "type": "object",
            "properties": {
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "max_evaluations": {"type": "integer", "minimum": 1},
                "literal": {"type": "boolean"},
            },
            "additionalProperties": False,
        },
        "cases": {"type": "array", "items": {"enum": ["i", "ii", "iii", "thick"]}},
        "verify": {
            "type": "object",
            "properties": {
                "kinds": {"type": "array", "items": {"enum": ["tunneling", "transition_state"]}},
                "tolerance": {"type": "number", "exclusiveMinimum": 0},
                "unitarity_tolerance": {"type": "number", "exclusiveMinimum": 0},
                "symmetry_tolerance": {"type": "number", "exclusiveMinimum": 0},
                "mutate_sign": {"type": "boolean"},
            },
            "additionalProperties": False,
        },
        "integral": {
            "type": "object",
            "properties": {
                "kind": {"enum": ["xi", "formation"]},
                "transmissions": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}},
                "t_a": {"type": "number", "minimum": 0, "maximum": 1},
            },
            "additionalProperties": False,
        },
        "output": {
            "type": "object",
            "properties": {"dir": {"type": "string"}, "plot": {"type": "boolean"}},
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}


def _uniform(count, t):
    return [{"t": t, "count": count}]


DEFAULTS = {
    "spectrum": {
        "model": {"kind": "tunneling", "n": 500, "v_tilde": 0.0},
        "realizations": 100,
        "estimators": ["spectrum"],
    },
    "xi": {
        "model": {"kind": "tunneling", "n": 400, "v_tilde": 0.3, "channels1": _uniform(5, 1.0)},
        "realizations": 2000,
        "estimators": ["xi_stats", "formation", "s_mean"],
    },
    "transition": {
        "model": {"kind": "tunneling", "n": 400, "v_tilde": 1.0,
                  "channels1": _uniform(20, 1.0), "channels2": _uniform(20, 1.0)},
        "realizations": 1000,
        "estimators": ["pab"],
        "cases": ["iii"],
    },
    "verify": {
        "model": {"kind": "tunneling", "n": 100, "v_tilde": 0.3,
                  "channels1": _uniform(3, 1.0), "channels2": _uniform(3, 1.0)},
        "realizations": 50,
        "verify": {"kinds": ["tunneling", "transition_state"], "tolerance": 1e-10,
                   "unitarity_tolerance": 1e-10, "symmetry_tolerance": 1e-12,
                   "mutate_sign": False},
    },
    "integral": {
        "integral": {"kind": "xi", "transmissions": [1.0] * 20},
    },
}

COMMON = {"seed": 0, "workers": 1, "batches": 20,
          "quadrature": {"tol": 1e-6, "max_evaluations": 10**7, "literal": False},
          "output": {"dir": ".", "plot": False}}


class ConfigError(Exception):
    pass


def _merge(base, over):
    out = copy.deepcopy(base)
    for key, value in over.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def resolve_config(command: str, path: str | None, args) -> dict:
    """Defaults, then the config file, then command-line flags; schema-checked."""
    cfg = _merge(COMMON, DEFAULTS[command])
    if path:
        try:
            user = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        _validate(user)
        cfg = _merge(cfg, user)
    for flag in ("seed", "realizations", "workers"):
        value = getattr(args, flag, None)
        if value is not None:
            cfg[flag] = value
    if getattr(args, "out", None) is not None:
        cfg["output"]["dir"] = args.out
    if getattr(args, "plot", False):
        cfg["output"]["plot"] = True
    if command == "verify":
        if args.tolerance is not None:
            cfg["verify"]["tolerance"] = args.tolerance
        if args.mutate_sign:
            cfg["verify"]["mutate_sign"] = True
    if command == "transition" and args.cases:
        cfg["cases"] = args.cases
    if command == "integral":
        if args.kind is not None:
            cfg["integral"]["kind"] = args.kind
        if args.transmissions is not None:
            cfg["integral"]["transmissions"] = args.transmissions
        if args.t_a is not None:
            cfg["integral"]["t_a"] = args.t_a
        if args.tol is not None:
            cfg["quadrature"]["tol"] = args.tol
        if args.literal:
            cfg["quadrature"]["literal"] = True
    _validate(cfg)
    return cfg


def _validate(cfg):
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {where}: {exc.message}") from exc


def _channels(items):
    out = []
    for item in items or ():
        key = "t" if "t" in item else "v"
        out += [ChannelSpec(**{key: item[key]})] * int(item.get("count", 1))
    return tuple(out)


def _transmission_list(items):
    """Nominal transmissions; channels given by strength are not supported here."""
    out = []
    for item in items or ():
        if "t" not in item:
            raise ConfigError("predictions need channels specified by transmission t")
        out += [item["t"]] * int(item.get("count", 1))
    return out


def model_spec(cfg: dict, kind: str | None = None) -> ModelSpec:
    m = cfg["model"]
    kind = kind or m["kind"]
    kw = dict(kind=kind, n=m["n"], lam=m.get("lambda", 1.0), energy=m.get("energy", 0.0),
              e0=m.get("e0", 0.0), channels1=_channels(m.get("channels1")),
              channels2=_channels(m.get("channels2")), seed=cfg["seed"])
    if kind == "tunneling":
        kw["v_tilde"] = m.get("v_tilde")
    else:
        kw["v1_tilde"] = m.get("v1_tilde")
        kw["v2_tilde"] = m.get("v2_tilde")
    return ModelSpec(**kw)


def ensemble_config(cfg: dict, estimators=None) -> EnsembleConfig:
    return EnsembleConfig(model=model_spec(cfg), realizations=cfg["realizations"],
                          master_seed=cfg["seed"], workers=cfg["workers"],
                          estimators=frozenset(estimators or cfg["estimators"]),
                          batches=cfg["batches"])


def config_digest(cfg: dict) -> str:
    text = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def _canonical(cfg):
    return json.dumps(cfg, sort_keys=True, separators=(",", ":"))


def _out_dir(cfg) -> Path:
    d = Path(cfg["output"]["dir"])
    d.mkdir(parents=True, exist_ok=True)
    return d


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (complex, np.complexfloating)):
        return {"re": float(x.real), "im": float(x.imag)}
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        x = float(x)
    if isinstance(x, float) and not np.isfinite(x):
        return str(x)
    return x


def write_summary(path: Path, cfg: dict, started: float, payload: dict):
    doc = {"config_digest": config_digest(cfg), "seed": cfg["seed"],
           "realizations": cfg.get("realizations"), "wall_time_s": time.perf_counter() - started,
           "config": cfg}
    doc.update(_jsonable(payload))
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def write_csv(path: Path, cfg: dict, header, rows):
    with path.open("w", newline="") as fh:
        fh.write(f"# config_digest: {config_digest(cfg)}\n")
        fh.write(f"# seed: {cfg['seed']}\n")
        fh.write(f"# config: {_canonical(cfg)}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, (int, np.integer)) else f"{v:.17g}" for v in row])


def read_csv(path) -> tuple[list[str], np.ndarray]:
    """Header and numeric body of a CSV written by this tool (comment lines skipped)."""
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    header = lines[0].split(",")
    body = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    return header, body


def _save_svg(fig, path: Path, cfg: dict):
    fig.savefig(path, format="svg", metadata={"Description": _canonical(cfg), "Date": None})


def cmd_spectrum(cfg: dict) -> int:
    started = time.perf_counter()
    ens = ensemble_config(cfg, {"spectrum"})
    stats = run_ensemble(ens)
    hist = stats.spectrum
    lam, n = ens.model.lam, ens.model.n
    # two spaces are pooled, so the reference density is twice the semicircle
    ref = 2.0 * semicircle_density(hist.centers, lam, n)
    rows = list(zip(hist.centers, hist.counts, hist.density, ref))
    out = _out_dir(cfg)
    write_csv(out / "spectrum.csv", cfg, ["bin_center", "count", "density", "semicircle"], rows)
    write_summary(out / "spectrum.json", cfg, started, {
        "levels_per_realization": hist.levels_per_realization,
        "underflow": hist.underflow, "overflow": hist.overflow,
        "failures": stats.failures,
    })
    if cfg["output"]["plot"]:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(6, 4))
        width = np.diff(hist.edges)
        ax.bar(hist.centers, hist.density, width=width, alpha=0.5, label="pooled levels")
        e = np.linspace(-2 * lam, 2 * lam, 401)
        ax.plot(e, 2.0 * semicircle_density(e, lam, n), "k-", label="semicircle (x2)")
        ax.set_xlabel("E")
        ax.set_ylabel("levels per unit energy")
        ax.legend()
        _save_svg(fig, out / "spectrum.svg", cfg)
        plt.close(fig)
    return EXIT_OK


def cmd_xi(cfg: dict) -> int:
    started = time.perf_counter()
    ens = ensemble_config(cfg)
    spec = ens.model
    if not spec.channels1:
        raise ConfigError("the xi command needs channels on side 1")
    stats = run_ensemble(ens)
    q = cfg["quadrature"]
    t1 = _transmission_list(cfg["model"].get("channels1"))
    payload = {"mean_re": float(stats.xi1.mean.real), "mean_im": float(stats.xi1.mean.imag),
               "var": float(stats.xi1.variance), "se": float(stats.xi1.se),
               "var_se": None if stats.xi1.variance_se is None else float(stats.xi1.variance_se),
               "count": stats.count, "failures": stats.failures,
               "asymptote": vwz.xi_variance_asymptotic(t1)}
    try:
        res = vwz.xi_variance_integral(t1, tol=q["tol"], max_evaluations=q["max_evaluations"],
                                       literal=q["literal"])
        payload.update(quadrature_value=res.value, quadrature_error=res.error_estimate,
                       quadrature_converged=res.converged, quadrature_evaluations=res.evaluations)
    except DivergentIntegralError as exc:
        payload.update(quadrature_value=None, quadrature_error=None, error=str(exc))
    if stats.formation1 is not None:
        payload["formation_mean"] = stats.formation1.mean
        payload["formation_se"] = stats.formation1.se
    if stats.s_mean1 is not None:
        payload["s_mean"] = stats.s_mean1.mean
        payload["transmission"] = 1.0 - np.abs(stats.s_mean1.mean) ** 2
    out = _out_dir(cfg)
    write_summary(out / "xi.json", cfg, started, payload)
    return EXIT_OK


def cmd_transition(cfg: dict) -> int:
    started = time.perf_counter()
    ens = ensemble_config(cfg, set(cfg["estimators"]) | {"pab"})
    stats = run_ensemble(ens)
    mc = stats.pab.mean
    se = stats.pab.se
    t1 = _transmission_list(cfg["model"].get("channels1"))
    t2 = _transmission_list(cfg["model"].get("channels2"))
    out = _out_dir(cfg)
    rows = [(a, b, mc[a, b], se[a, b]) for a in range(mc.shape[0]) for b in range(mc.shape[1])]
    write_csv(out / "pab.csv", cfg, ["a", "b", "mean", "se"], rows)
    preds = {}
    for case in cfg["cases"]:
        rec = predict_case(ens, t1, t2, case, stats=stats, tol=cfg["quadrature"]["tol"])
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = mc / rec.pab
        preds[case] = {"predicted": rec.pab, "ratio_mc_to_prediction": ratio,
                       "mean_ratio": float(np.mean(ratio)), "a_factor": rec.a_factor,
                       "notes": list(rec.notes)}
    # decay-side factorization: <P_ab>/<P_ab'> against T_b/T_b'
    col = mc.mean(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        fact = {"column_means": col, "column_ratio_to_first": col / col[0],
                "transmission_ratio_to_first": np.asarray(t2) / t2[0]}
    write_summary(out / "transition.json", cfg, started, {
        "pab_mean": mc, "pab_se": se, "p_a": stats.p_a.mean, "p_b": stats.p_b.mean,
        "failures": stats.failures, "predictions": preds, "factorization": fact})
    if cfg["output"]["plot"]:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(5, 4))
        im = ax.imshow(mc, origin="lower", aspect="auto")
        ax.set_xlabel("b")
        ax.set_ylabel("a")
        fig.colorbar(im, ax=ax, label="<P_ab>")
        _save_svg(fig, out / "pab.svg", cfg)
        plt.close(fig)
    return EXIT_OK


def _verify_defaults(cfg, kind):
    m = dict(cfg["model"])
    m["kind"] = kind
    m.setdefault("v_tilde", 0.3)
    m.setdefault("v1_tilde", 0.2)
    m.setdefault("v2_tilde", 0.2)
    return model_spec({**cfg, "model": m}, kind)


def verify_realizations(cfg: dict) -> dict:
    """Identity, unitarity and symmetry checks; returns worst values per kind."""
    v = cfg["verify"]
    report = {}
    for kind in v["kinds"]:
        spec = _verify_defaults(cfg, kind)
        worst = {"identity": 0.0, "unitarity": 0.0, "symmetry": 0.0}
        for k in range(cfg["realizations"]):
            real = build_realization(spec, stream(cfg["seed"], k))
            fac = smatrix_factorized(real)
            s_fac = -fac.s_cross if v["mutate_sign"] else fac.s_cross
            direct = smatrix_direct(real)
            s = direct.s_full
            scale = np.max(np.abs(direct.s_cross))
            if scale > 0:
                ident = np.max(np.abs(s_fac - direct.s_cross)) / scale
            else:
                ident = np.max(np.abs(s_fac))
            worst["identity"] = max(worst["identity"], float(ident))
            worst["unitarity"] = max(worst["unitarity"],
                                     float(np.max(np.abs(s.conj().T @ s - np.eye(s.shape[0])))))
            worst["symmetry"] = max(worst["symmetry"], float(np.max(np.abs(s - s.T))))
        worst["passed"] = bool(worst["identity"] <= v["tolerance"]
                               and worst["unitarity"] <= v["unitarity_tolerance"]
                               and worst["symmetry"] <= v["symmetry_tolerance"])
        report[kind] = worst
    return report


def cmd_verify(cfg: dict) -> int:
    started = time.perf_counter()
    report = verify_realizations(cfg)
    passed = all(r["passed"] for r in report.values())
    write_summary(_out_dir(cfg) / "verify.json", cfg, started, {"checks": report, "passed": passed})
    for kind, r in report.items():
        status = "ok" if r["passed"] else "FAILED"
        print(f"{kind}: identity {r['identity']:.3e} unitarity {r['unitarity']:.3e} "
              f"symmetry {r['symmetry']:.3e} {status}")
    return EXIT_OK if passed else EXIT_CHECK


def cmd_integral(cfg: dict) -> int:
    started = time.perf_counter()
    spec = cfg["integral"]
    q = cfg["quadrature"]
    t = spec["transmissions"]
    if spec["kind"] == "xi":
        res = vwz.xi_variance_integral(t, tol=q["tol"], max_evaluations=q["max_evaluations"],
                                       literal=q["literal"])
        asym = vwz.xi_variance_asymptotic(t)
    else:
        if "t_a" not in spec:
            raise ConfigError("the formation integral needs t_a")
        res = vwz.formation_variance_integral(spec["t_a"], t, tol=q["tol"],
                                              max_evaluations=q["max_evaluations"],
                                              literal=q["literal"])
        asym = vwz.formation_asymptotic(spec["t_a"], t)
    write_summary(_out_dir(cfg) / "integral.json", cfg, started, {
        "value": res.value, "error_estimate": res.error_estimate,
        "evaluations": res.evaluations, "converged": res.converged,
        "message": res.message, "asymptote": asym})
    print(f"{spec['kind']}: {res.value:.10g} +- {res.error_estimate:.2g} "
          f"(converged={res.converged}, asymptote {asym:.6g})")
    return EXIT_OK if res.converged else EXIT_NUMERICAL


COMMANDS = {"spectrum": cmd_spectrum, "xi": cmd_xi, "transition": cmd_transition,
            "verify": cmd_verify, "integral": cmd_integral}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--realizations", type=int)
    common.add_argument("--workers", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--plot", action="store_true", help="also write SVG plots")

    p = argparse.ArgumentParser(prog="transition-rmt", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("spectrum", parents=[common], help="pooled GOE level histogram")
    sub.add_parser("xi", parents=[common], help="statistics of the pivot element xi")
    tr = sub.add_parser("transition", parents=[common], help="<P_ab> and case predictions")
    tr.add_argument("--cases", nargs="+", choices=["i", "ii", "iii", "thick"])
    ve = sub.add_parser("verify", parents=[common], help="factorized vs direct S-matrix")
    ve.add_argument("--tolerance", type=float)
    ve.add_argument("--mutate-sign", action="store_true",
                    help="flip the sign of the barrier factor (the check must then fail)")
    it = sub.add_parser("integral", parents=[common], help="saddle-point integrals")
    it.add_argument("--kind", choices=["xi", "formation"])
    it.add_argument("--transmissions", type=float, nargs="+")
    it.add_argument("--t-a", type=float, dest="t_a")
    it.add_argument("--tol", type=float)
    it.add_argument("--literal", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args.command, args.config, args)
        return COMMANDS[args.command](cfg)
    except (ConfigError, InvalidArgument, InconsistentInput, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalFailure, DivergentIntegralError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
