"""Command-line runner: every experiment produces a JSON run record that can be replayed."""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import io
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .gaussian import CorrelatedGaussianModel, DomainError, RngStream, std_normal_ppf
from .ou import line_difference, line_limits, line_restriction
from .partition import (
    FlatPartition,
    SlabPartition,
    StandardSimplexSpec,
    estimate_volumes,
    exact_volumes,
    facet_adjacent,
    make_standard_simplex,
    partition_from_json,
    shifted_simplex,
)
from .perturbation import improve
from .stability import compare_mc, stability_bilinear, stability_mc, stability_quadrature
from .voting import (
    PLURALITY,
    BiasedMeasure,
    CorrelatedPairLaw,
    compare_discrete,
    discrete_stability,
    override_competitor,
    override_difference,
    plurality_limit_partition,
)

EXIT_CONFIG = 2
EXIT_GEOMETRY = 3

DEFAULTS = {
    "stability": {"rho": 0.5, "samples": 10**5, "order": 80, "seed": 0},
    "limits": {"rho": 0.5, "pair": [0, 1], "t_min": -50.0, "t_max": 50.0, "points": 513, "seed": 0},
    "improve": {"rho": 0.5, "volume_first": 0.4, "budget": 5, "samples": 10**6, "seed": 0},
    "plurality": {"rho": 0.5, "alpha": 1.0, "beta": 0.0, "n": 10**4, "samples": 10**6,
                  "samples_per_point": 2 * 10**4, "gaussian_samples": 10**6, "seed": 0},
    "bilinear": {"rho": 0.5, "mode": "optimum", "a": [1 / 3, 1 / 3, 1 / 3], "b": [0.5, 0.0, 0.5],
                 "samples": 10**6, "challengers": 20, "seed": 0},
    "volumes": {"samples": 10**5, "seed": 0},
}


class ConfigError(Exception):
    pass


def _say(msg: str):
    print(msg, file=sys.stderr)


# --- config -------------------------------------------------------------------------

def _load_json_text(text: str, source: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}")


def _load_json_file(path: str):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}")
    return _load_json_text(text, path)


def resolve_config(command: str, args) -> dict:
    cfg = dict(DEFAULTS[command])
    if args.config:
        doc = _load_json_file(args.config)
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        if "config" in doc and "results" in doc:  # a previous run record
            if doc.get("command", command) != command:
                raise ConfigError(f"record is for command {doc.get('command')!r}, not {command!r}")
            doc = doc["config"]
        unknown = set(doc) - set(cfg) - {"partition", "volume_first", "n", "k", "challenger_pairs"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(doc)
    for key in ("seed", "samples", "rho"):
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    _validate(cfg)
    return cfg


def _validate(cfg: dict):
    def num(key, lo=-math.inf, hi=math.inf, integer=False):
        if key not in cfg:
            return
        v = cfg[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)) or (integer and int(v) != v):
            raise ConfigError(f"{key} must be {'an integer' if integer else 'a number'}")
        if not (lo <= v <= hi):
            raise ConfigError(f"{key}={v} outside [{lo}, {hi}]")
        if integer:
            cfg[key] = int(v)

    num("seed", 0, 2**64 - 1, integer=True)
    num("samples", 1000, integer=True)
    num("rho", -1.0, 1.0)
    if "rho" in cfg and abs(cfg["rho"]) >= 1.0:
        raise ConfigError("rho must lie strictly inside (-1, 1)")
    num("order", 4, 400, integer=True)
    num("budget", 1, 100, integer=True)
    num("n", 1, 10**6, integer=True)
    num("points", 2, 10**6, integer=True)
    num("samples_per_point", 100, integer=True)
    num("gaussian_samples", 1000, integer=True)
    num("challengers", 0, 1000, integer=True)
    num("volume_first", 0.0, 1.0)
    for key in ("alpha", "beta", "t_min", "t_max"):
        num(key)


def _partition(cfg: dict):
    spec = cfg.get("partition")
    try:
        if spec is not None:
            doc = _load_json_file(spec) if isinstance(spec, str) else spec
            return partition_from_json(doc)
        if "volume_first" in cfg:
            return shifted_simplex(cfg["volume_first"])
        return make_standard_simplex(StandardSimplexSpec(int(cfg.get("n", 2))))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid partition: {exc}")


# --- run records ------------------------------------------------------------------------

def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj


def record_digest(config: dict, results: dict, version: str) -> str:
    doc = json.dumps({"config": config, "results": results, "version": version}, sort_keys=True,
                     separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(doc.encode()).hexdigest()


def make_record(command: str, config: dict, results: dict, started: str) -> dict:
    config, results = _clean(config), _clean(results)
    return {"command": command, "config": config, "results": results, "version": __version__,
            "digest": record_digest(config, results, __version__),
            "timestamps": {"started": started, "finished": _now()}}


def verify_record(rec: dict) -> bool:
    return rec.get("digest") == record_digest(rec["config"], rec["results"], rec["version"])


def _now() -> str:
    # SOURCE_DATE_EPOCH pins the timestamps so reruns are byte-identical
    fixed = os.environ.get("SOURCE_DATE_EPOCH")
    when = _dt.datetime.fromtimestamp(int(fixed), _dt.timezone.utc) if fixed else _dt.datetime.now(_dt.timezone.utc)
    return when.isoformat(timespec="seconds")


def _rows(results: dict, prefix=""):
    for k, v in results.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            yield from _rows(v, key + ".")
        elif isinstance(v, list) and v and all(isinstance(e, dict) for e in v):
            for m, e in enumerate(v):
                yield from _rows(e, f"{key}.{m}.")
        else:
            yield key, json.dumps(v) if isinstance(v, list) else v


# --- commands -------------------------------------------------------------------------

def cmd_stability(cfg: dict) -> dict:
    p = _partition(cfg)
    model = CorrelatedGaussianModel(p.n, cfg["rho"])
    rng = RngStream(cfg["seed"])
    est = stability_mc(p, model, cfg["samples"], rng)
    out = {"mc": est.to_json()}
    _say(f"S_rho (Monte Carlo) = {est.value:.6f} +- {est.std_error:.6f}")
    if isinstance(p, FlatPartition) and p.n == 2 and cfg["rho"] != 0.0:
        q = stability_quadrature(p, model, cfg["order"])
        out["quadrature"] = q.to_json()
        _say(f"S_rho (quadrature, order {cfg['order']}) = {q.value:.10f}")
    return out


def cmd_limits(cfg: dict) -> dict:
    p = _partition(cfg)
    if not isinstance(p, FlatPartition) or p.n != 2:
        raise ConfigError("limits needs a planar flat partition")
    i, j = (int(v) for v in cfg["pair"])
    if not facet_adjacent(p, i, j):
        raise DomainError(f"cells {i} and {j} are not facet-adjacent")
    lr = line_restriction(p, i, j)
    t = np.linspace(cfg["t_min"], cfg["t_max"], cfg["points"])
    h = line_difference(p, lr, cfg["rho"], t)
    lo, hi = line_limits(lr.c, cfg["rho"])
    _say(f"facet ({i}, {j}): c = {lr.c:.6f}; plateaus {h[0]:.6e} (t={t[0]}) and {h[-1]:.6e} (t={t[-1]})")
    _say(f"closed-form limits: t -> -inf {lo:.6e}, t -> +inf {hi:.6e}")
    return {"pair": [i, j], "c": lr.c, "limit_minus_inf": lo, "limit_plus_inf": hi,
            "plateau_low": float(h[0]), "plateau_high": float(h[-1]),
            "curve": [{"t": float(a), "value": float(b)} for a, b in zip(t, h)]}


def cmd_improve(cfg: dict) -> dict:
    p = _partition(cfg)
    if not isinstance(p, FlatPartition) or p.n != 2 or p.k != 3:
        raise ConfigError("improve needs a planar flat partition with three cells")
    rho = cfg["rho"]
    if rho == 0.0:
        raise ConfigError("improve needs rho != 0")
    model = CorrelatedGaussianModel(2, rho)
    base = stability_quadrature(p, model)
    q, rep = improve(p, rho, cfg["budget"], cfg["samples"], RngStream(cfg["seed"]))
    out = {"baseline": base.value, "report": rep.to_json()}
    if rep.best is None:
        _say(f"baseline S_rho = {base.value:.10f}: {rep.message}")
        return out
    b = rep.best
    out.update({"improved": base.value + b.value, "margin_se": b.value / b.std_error,
                "partition": q.to_json()})
    _say(f"baseline S_rho = {base.value:.10f}")
    _say(f"best perturbed S_rho = {base.value + b.value:.10f} (delta {b.delta}); "
         f"change {b.value:+.3e} +- {b.std_error:.1e} = {b.value / b.std_error:+.1f} SE")
    return out


def cmd_plurality(cfg: dict) -> dict:
    alpha, beta, rho, n = cfg["alpha"], cfg["beta"], cfg["rho"], cfg["n"]
    if alpha == 0 and beta == 0:
        _say("warning: the non-stablest statement needs (alpha, beta) != (0, 0); running anyway")
    if not (0.0 <= rho <= 1.0):
        raise ConfigError("plurality needs rho in [0, 1]")
    law = CorrelatedPairLaw(BiasedMeasure(n, alpha, beta), rho)
    rng = RngStream(cfg["seed"])
    out = {}
    if n <= 8:
        ex = discrete_stability(PLURALITY, law, method="exact")
        out["plurality_exact"] = ex.value
        _say(f"plurality stability (exact, n={n}) = {ex.value:.12f}")
    if "partition" in cfg:
        B = _partition(cfg)
    elif rho > 0 and (alpha, beta) != (0, 0):
        B, rep = improve(plurality_limit_partition(alpha, beta), rho, samples=cfg["gaussian_samples"],
                         rng=rng.child(1))
        out["gaussian_report"] = rep.to_json()
    else:
        B = plurality_limit_partition(alpha, beta)
    if not getattr(B, "patches", None):
        _say("no improved Gaussian partition available; competitor equals plurality")
    ov = override_competitor(B, law) if getattr(B, "patches", None) else None
    g = ov.function if ov else PLURALITY
    cmp_ = compare_discrete(PLURALITY, g, law, cfg["samples"], rng.child(2))
    out.update({"frequencies": {"plurality": cmp_.frequencies[0], "competitor": cmp_.frequencies[1]},
                "frequency_std_errors": cmp_.frequency_std_errors,
                "stability": {"plurality": cmp_.stabilities[0], "competitor": cmp_.stabilities[1]},
                "stability_std_errors": cmp_.std_errors,
                "crn_gap": cmp_.diff, "crn_gap_std_error": cmp_.diff_std_error})
    _say(f"plurality frequencies {np.round(cmp_.frequencies[0], 6)}; competitor {np.round(cmp_.frequencies[1], 6)}")
    if ov is not None:
        gap, se = override_difference(ov, law, cfg["samples_per_point"], rng.child(3))
        out.update({"overridden_points": len(ov.counts), "exact_volume_shift": ov.volume_shift,
                    "local_gap": gap, "local_gap_std_error": se, "competitor": ov.function.to_json()})
        if len(ov.counts) == 0:
            _say(f"no count vectors fall inside the perturbation at n={n}; competitor equals plurality")
        else:
            _say(f"stability gap (competitor - plurality) = {gap:+.3e} +- {se:.1e} ({gap / se:+.1f} SE)")
    return out


def _optimum_pair():
    u = np.array([1.0, 0.0])
    a = float(std_normal_ppf(1 / 3))
    A = SlabPartition(u, [a, -a])
    B = SlabPartition(u, [0.0, 0.0])
    return A, B


def _challengers(count: int, rng: RngStream):
    gen = rng.generator(0)
    out = []
    for m in range(count):
        th_a, th_b = gen.uniform(0, 2 * math.pi, 2)
        ua = np.array([math.cos(th_a), math.sin(th_a)])
        ub = np.array([math.cos(th_b), math.sin(th_b)])
        if m % 2 == 0:
            a = float(std_normal_ppf(1 / 3))
            A = SlabPartition(ua, [a, -a])
        else:
            rot = np.array([[math.cos(th_a), -math.sin(th_a)], [math.sin(th_a), math.cos(th_a)]])
            c = make_standard_simplex(StandardSimplexSpec(2))
            A = FlatPartition(np.zeros(2), c.directions @ rot.T)
        out.append((A, SlabPartition(ub, [0.0, 0.0])))
    return out


def cmd_bilinear(cfg: dict) -> dict:
    if cfg["mode"] != "optimum":
        raise ConfigError("bilinear supports mode 'optimum'")
    if not (np.allclose(cfg["a"], [1 / 3] * 3, atol=1e-9) and np.allclose(cfg["b"], [0.5, 0.0, 0.5], atol=1e-9)):
        raise ConfigError("optimum mode needs a = (1/3, 1/3, 1/3) and b = (1/2, 0, 1/2)")
    rho = cfg["rho"]
    model = CorrelatedGaussianModel(2, rho)
    A, B = _optimum_pair()
    closed = stability_bilinear(A, B, model, "closed-form")
    rng = RngStream(cfg["seed"])
    mc = stability_bilinear(A, B, model, "mc", cfg["samples"], rng.child(1))
    _say(f"optimum: closed form {closed.value:.10f}; Monte Carlo {mc.value:.6f} +- {mc.std_error:.6f}")
    rows = []
    for m, (Ac, Bc) in enumerate(_challengers(cfg["challengers"], rng.child(2))):
        est = stability_bilinear(Ac, Bc, model, "mc", cfg["samples"], rng.child(100 + m))
        rows.append({"value": est.value, "std_error": est.std_error,
                     "excess_se": (est.value - closed.value) / est.std_error})
    worst = max((r["excess_se"] for r in rows), default=-math.inf)
    if rows:
        _say(f"{len(rows)} challengers; largest excess over the optimum {worst:+.2f} SE")
    return {"closed_form": closed.value, "mc": mc.to_json(), "challengers": rows,
            "max_excess_se": worst if rows else None}


def cmd_volumes(cfg: dict) -> dict:
    p = _partition(cfg)
    model = CorrelatedGaussianModel(p.n, 0.0)
    a, se = estimate_volumes(p, model, cfg["samples"], RngStream(cfg["seed"]))
    out = {"mc": a, "mc_std_error": se}
    if isinstance(p, FlatPartition) and p.n == 2:
        out["exact"] = exact_volumes(p)
        _say(f"exact volumes {np.round(out['exact'], 8)}")
    _say(f"Monte Carlo volumes {np.round(a, 6)} +- {np.round(se, 6)}")
    return out


COMMANDS = {"stability": cmd_stability, "limits": cmd_limits, "improve": cmd_improve,
            "plurality": cmd_plurality, "bilinear": cmd_bilinear, "volumes": cmd_volumes}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nslab", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON config file or a previous run record")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--samples", type=int)
        sp.add_argument("--rho", type=float)
        sp.add_argument("--out", help="write the record (or CSV) here instead of stdout")
        sp.add_argument("--format", choices=("json", "csv"), default="json")
    return ap


def _emit(record: dict, fmt: str, out: str | None):
    if fmt == "json":
        text = json.dumps(record, indent=2, sort_keys=True) + "\n"
    else:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        curve = record["results"].get("curve")
        if curve is not None:
            w.writerow(["t", "value"])
            for row in curve:
                w.writerow([repr(row["t"]), repr(row["value"])])
        else:
            w.writerow(["key", "value"])
            for k, v in _rows(record["results"]):
                w.writerow([k, v])
        text = buf.getvalue()
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    started = _now()
    try:
        cfg = resolve_config(args.command, args)
        results = COMMANDS[args.command](cfg)
    except ConfigError as exc:
        _say(f"config error: {exc}")
        return EXIT_CONFIG
    except DomainError as exc:
        _say(f"geometry error: {exc}")
        return EXIT_GEOMETRY
    _emit(make_record(args.command, cfg, results, started), args.format, args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
