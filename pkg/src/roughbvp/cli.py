"""Config-driven runner: ``roughbvp run <config>`` and ``roughbvp report <dir>``.

Config files are flat ``key = value`` lines with dotted sections::

    seed = 3
    experiments = [wa, loc]
    solver.tol = 1e-10
    wa.kind = weak_ainfty
    wa.domain = kind=disk, h=1/64
    wa.npoles = 20
    wa.tol.rh2_drift = 2          # summary value must be <= 2
    wa.tol_min.c0 = 0.01          # summary value must be >= 0.01

Every key may be overridden from the environment with the prefix
``ROUGHBVP_`` and ``__`` for dots (``ROUGHBVP_WA__NPOLES=8``).
"""
from __future__ import annotations

import argparse
import csv
import io
import math
import os
import sys
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import elliptic as ell
from . import experiments as ex
from .domain2d import KINDS as DOMAIN_KINDS, parse_domain_spec

ENV_PREFIX = "ROUGHBVP_"
TOP_KEYS = {"seed": int, "jobs": int, "out": str, "experiments": list,
            "solver.tol": float, "solver.maxiter": int, "solver.method": str}
COMMON = {"kind": str, "domain": str, "coeff": str, "seed": int}
KINDS = {
    "regularity": {"p": float, "count": int, "dataset": str},
    "localization": {"p": float, "variant": str, "scales": list, "per_scale": int},
    "atom_extrapolation": {"r": float, "scales": list, "per_scale": int, "apertures": list},
    "weak_ainfty": {"npoles": int, "eta": float, "cprime": float, "scales": list},
    "aux": {"target": str, "p": float, "count": int, "apertures": list, "E": str, "R": float},
    "poisson_regularity": {"p": float, "count": int, "r": float},
    "bourgain": {"scales": list, "ncenters": int},
    "green_bound": {"scales": list, "npoles": int, "ncenters": int},
}
HIGHER_IS_BETTER = {"min", "theta", "c0", "c", "alpha_hat", "good_lambda_eta", "min_total"}


class ConfigError(ValueError):
    pass


# -- config ----------------------------------------------------------------------

def parse_value(text: str, typ):
    text = text.strip()
    if typ is list:
        inner = text[1:-1] if text.startswith("[") and text.endswith("]") else text
        return [parse_scalar(t) for t in inner.split(",") if t.strip()]
    if typ is int:
        return int(text)
    if typ is float:
        return float(Fraction(text)) if "/" in text else float(text)
    return text


def parse_scalar(text: str):
    text = text.strip()
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    try:
        return float(Fraction(text))
    except (ValueError, ZeroDivisionError):
        return text


@dataclass
class RunConfig:
    seed: int = 0
    jobs: int = 1
    out: str = "roughbvp_out"
    experiments: list = field(default_factory=list)
    solver: dict = field(default_factory=dict)
    sections: dict = field(default_factory=dict)   # id -> {key: value}
    origin: dict = field(default_factory=dict)     # key -> "file:line" for messages

    def settings(self) -> ell.SolverSettings:
        return ell.SolverSettings(**self.solver)


def read_pairs(text: str, source: str):
    """(key, value, where) triples from key=value text; '#' starts a comment."""
    out = []
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected key = value, got {raw.strip()!r}")
        k, v = line.split("=", 1)
        k = k.strip()
        if not k:
            raise ConfigError(f"{source}:{n}: empty key")
        out.append((k, v.strip(), f"{source}:{n}"))
    return out


def env_pairs(environ=None):
    environ = os.environ if environ is None else environ
    out = []
    for name in sorted(environ):
        if name.startswith(ENV_PREFIX):
            key = name[len(ENV_PREFIX):].lower().replace("__", ".")
            out.append((key, environ[name], f"environment {name}"))
    return out


def build_config(pairs) -> RunConfig:
    raw = {}
    where = {}
    for k, v, w in pairs:
        raw[k] = v
        where[k] = w
    cfg = RunConfig(origin=where)
    ids = []
    if "experiments" in raw:
        ids = [str(x) for x in parse_value(raw["experiments"], list)]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"{where['experiments']}: duplicate experiment id")
    # every key must be a known top-level key or belong to a listed experiment
    for k, v in raw.items():
        try:
            if k in TOP_KEYS:
                val = parse_value(v, TOP_KEYS[k])
                if k.startswith("solver."):
                    cfg.solver[k.split(".", 1)[1]] = val
                elif k == "experiments":
                    cfg.experiments = ids
                else:
                    setattr(cfg, k, val)
                continue
            head, _, rest = k.partition(".")
            if head not in ids or not rest:
                raise ConfigError(f"{where[k]}: unknown key {k!r}")
            cfg.sections.setdefault(head, {})[rest] = v
        except ValueError as err:
            if isinstance(err, ConfigError):
                raise
            raise ConfigError(f"{where[k]}: bad value for {k!r}: {err}") from None
    if cfg.solver.get("method", "direct") not in ("direct", "cg", "bicgstab"):
        raise ConfigError(f"{where['solver.method']}: solver.method must be direct, cg or bicgstab")
    for eid in ids:
        sec = cfg.sections.setdefault(eid, {})
        kind = sec.get("kind", eid)
        if kind not in KINDS:
            at = where.get(f"{eid}.kind", where.get("experiments", "config"))
            raise ConfigError(f"{at}: unknown experiment kind {kind!r}; choose from {sorted(KINDS)}")
        allowed = dict(COMMON, **KINDS[kind])
        typed = {"kind": kind}
        for key, v in sec.items():
            full = f"{eid}.{key}"
            try:
                if key.startswith("tol.") or key.startswith("tol_min."):
                    typed[key] = parse_value(v, float)
                elif key in allowed:
                    typed[key] = parse_value(v, allowed[key])
                else:
                    raise ConfigError(f"{where[full]}: unknown key {full!r} for kind {kind}")
            except ValueError as err:
                if isinstance(err, ConfigError):
                    raise
                raise ConfigError(f"{where[full]}: bad value for {full!r}: {err}") from None
        if "domain" not in typed:
            raise ConfigError(f"{where.get('experiments', 'config')}: experiment {eid!r} needs a domain")
        problem = check_domain_spec(typed["domain"]) or check_coeff_spec(typed.get("coeff", "identity"))
        if problem:
            at = where.get(f"{eid}.domain") if "domain" in problem else where.get(f"{eid}.coeff")
            raise ConfigError(f"{at}: {problem}")
        cfg.sections[eid] = typed
    return cfg


def check_domain_spec(text: str):
    fields = {}
    for part in text.replace(";", ",").split(","):
        if part.strip():
            if "=" not in part:
                return f"bad domain entry {part.strip()!r}"
            k, v = (t.strip() for t in part.split("=", 1))
            fields[k] = v
    if fields.get("kind") not in DOMAIN_KINDS:
        return f"domain kind must be one of {sorted(DOMAIN_KINDS)}"
    try:
        h = parse_value(fields.get("h", ""), float)
    except ValueError:
        return "domain needs a numeric h"
    if not 0 < h < 1:
        return "domain h must lie in (0, 1)"
    return None


def check_coeff_spec(text: str):
    name = text.partition("(")[0].strip()
    if name not in ("identity", "constant", "random", "random_sym", "smooth"):
        return f"unknown coeff {text!r}"
    return None


def load_config(path, environ=None, overrides=()) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ConfigError(f"{path}: cannot read config: {err}") from None
    pairs = read_pairs(text, str(path)) + env_pairs(environ) + list(overrides)
    return build_config(pairs)


# -- running ---------------------------------------------------------------------

_DOMAINS = {}


def get_domain(spec: str):
    if spec not in _DOMAINS:
        _DOMAINS[spec] = parse_domain_spec(spec)
    return _DOMAINS[spec]


def run_experiment(eid: str, sec: dict, seed: int, settings) -> ex.ExperimentReport:
    kind = sec["kind"]
    seed = sec.get("seed", seed)
    D = get_domain(sec["domain"])
    C = ell.coefficient_from_spec(D, sec.get("coeff", "identity"))
    if kind == "regularity":
        p = sec.get("p", 1.0)
        rng = np.random.default_rng(seed)
        count = sec.get("count", 10)
        if sec.get("dataset", "random") == "atoms":
            R = 8 * D.h
            data = [ex.hajlasz_atom(D, int(s), R, p)[0] for s in ex.ball_centers(D, count, rng)]
        else:
            data = [ex.random_lipschitz(D, rng) for _ in range(count)]
        rep = ex.regularity_constant(D, C, p, data, settings)
    elif kind == "localization":
        scales = sec.get("scales") or ex.dyadic_scales(D, 2, 4)
        balls = ex.localization_balls(D, scales, sec.get("per_scale", 4), seed)
        rep = ex.localization_check(D, C, sec.get("p", 2.0), balls, sec.get("variant", "vanishing"),
                                    seed, settings)
    elif kind == "atom_extrapolation":
        rep = ex.atom_extrapolation_check(D, C, sec.get("r", 1.0), sec.get("scales"),
                                          sec.get("per_scale", 4), seed,
                                          tuple(sec.get("apertures", (1.0, 2.0, 4.0))),
                                          settings=settings)
    elif kind == "weak_ainfty":
        rep = ex.weak_ainfty_check(D, C, sec.get("npoles", 20), sec.get("scales"), seed,
                                   sec.get("eta", 0.1), sec.get("cprime", 2.0), settings)
    elif kind == "aux":
        params = {k: v for k, v in sec.items() if k in KINDS["aux"] and k != "target"}
        params["seed"] = seed
        rep = ex.aux_inequality_checks(sec.get("target", "llogl"), D, C, params, settings)
    elif kind == "poisson_regularity":
        rep = ex.poisson_regularity_experiment(D, C, sec.get("p", 2.0), sec.get("count", 10),
                                               sec.get("r", 1.0), seed, settings)
    elif kind == "bourgain":
        rep = ex.bourgain_check(D, C, sec.get("scales"), sec.get("ncenters", 8), seed, settings)
    elif kind == "green_bound":
        rep = ex.green_bound_check(D, C, sec.get("scales"), sec.get("npoles", 6),
                                   sec.get("ncenters", 6), seed, settings)
    else:  # pragma: no cover - rejected during validation
        raise ConfigError(f"unknown kind {kind}")
    apply_tolerances(rep, sec)
    return rep


def apply_tolerances(rep: ex.ExperimentReport, sec: dict):
    for key, bound in sec.items():
        if key.startswith("tol."):
            name = key[4:]
            val = rep.summary.get(name, math.nan)
            rep.flags[f"tol:{name}<={bound!r}"] = bool(val <= bound)
        elif key.startswith("tol_min."):
            name = key[8:]
            val = rep.summary.get(name, math.nan)
            rep.flags[f"tol:{name}>={bound!r}"] = bool(val >= bound)


def _worker(args):
    eid, sec, seed, settings = args
    t0 = time.perf_counter()
    try:
        return eid, run_experiment(eid, sec, seed, settings), None
    except (ell.SolverError, ell.EllipticityError, ValueError, RuntimeError, ArithmeticError) as err:
        rep = ex.ExperimentReport(sec["kind"], sec.get("domain", ""), sec.get("coeff", "identity"))
        rep.flags["completed"] = False
        rep.notes.append(f"failed: {type(err).__name__}: {err}")
        rep.runtime = time.perf_counter() - t0
        return eid, rep, traceback.format_exc()


def summary_rows(results):
    rows = []
    for eid, rep in results:
        for k in sorted(rep.summary):
            rows.append((eid, rep.experiment, rep.domain, rep.coeff, "summary", k, ex._fmt(rep.summary[k])))
        for k in sorted(rep.flags):
            rows.append((eid, rep.experiment, rep.domain, rep.coeff, "flag", k, ex._fmt(rep.flags[k])))
    return rows


SUMMARY_HEADER = ("id", "experiment", "domain", "coeff", "type", "key", "value")


def write_summary(path, results):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_HEADER)
    w.writerows(summary_rows(results))
    Path(path).write_text(buf.getvalue())


# -- svg -------------------------------------------------------------------------

def svg_plot(path, series, title="", xlabel="", ylabel="", loglog=False, lines=False,
             width=420, height=320):
    """Scatter or polyline plot of one or more point lists, drawn directly as SVG."""
    pts = [np.asarray(s, float).reshape(-1, 2) for s in series if len(s)]
    pts = [p[np.all(np.isfinite(p), axis=1)] for p in pts]
    if loglog:
        pts = [np.log10(p[np.all(p > 0, axis=1)]) for p in pts]
    pts = [p for p in pts if len(p)]
    m = 40
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
           f'<text x="{m}" y="16" font-size="12">{title}</text>',
           f'<text x="{width // 2}" y="{height - 6}" font-size="11">{xlabel}</text>',
           f'<text x="4" y="{height // 2}" font-size="11">{ylabel}</text>',
           f'<rect x="{m}" y="{m // 2 + 8}" width="{width - 2 * m}" height="{height - 2 * m}" '
           'fill="none" stroke="black"/>']
    if pts:
        allp = np.vstack(pts)
        lo, hi = allp.min(axis=0), allp.max(axis=0)
        span = np.where(hi > lo, hi - lo, 1.0)

        def tr(p):
            x = m + (p[:, 0] - lo[0]) / span[0] * (width - 2 * m)
            y = height - m + 8 - (p[:, 1] - lo[1]) / span[1] * (height - 2 * m) - m // 2
            return x, y

        colors = ("#1f4e9e", "#b2182b", "#1a9850", "#762a83", "#e08214")
        for k, p in enumerate(pts):
            x, y = tr(p)
            c = colors[k % len(colors)]
            if lines and len(p) > 1:
                d = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(x, y))
                out.append(f'<polyline points="{d}" fill="none" stroke="{c}"/>')
            for a, b in zip(x, y):
                out.append(f'<circle cx="{a:.2f}" cy="{b:.2f}" r="2" fill="{c}"/>')
        out.append(f'<text x="{m}" y="{height - m + 22}" font-size="10">{lo[0]:.3g}</text>')
        out.append(f'<text x="{width - m - 30}" y="{height - m + 22}" font-size="10">{hi[0]:.3g}</text>')
        out.append(f'<text x="2" y="{height - m}" font-size="10">{lo[1]:.3g}</text>')
        out.append(f'<text x="2" y="{m}" font-size="10">{hi[1]:.3g}</text>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")


def write_plots(plot_dir: Path, eid: str, rep: ex.ExperimentReport):
    if "rh_scatter" in rep.series:
        svg_plot(plot_dir / f"{eid}-rh_scatter.svg", [rep.series["rh_scatter"]],
                 f"{eid}: measure ratio vs size ratio", "sigma(F)/sigma(B)", "omega(F)/omega(2B)")
    if "decay" in rep.series:
        svg_plot(plot_dir / f"{eid}-decay.svg", rep.series["decay"], f"{eid}: annulus averages",
                 "log10 distance", "log10 mean N", loglog=True, lines=True)
    r = [(k, c["ratio"]) for k, c in enumerate(rep.cases) if not c.get("excluded")]
    svg_plot(plot_dir / f"{eid}-ratios.svg", [r], f"{eid}: per-case ratios", "case", "ratio")


# -- commands --------------------------------------------------------------------

def cmd_run(config, out=None, seed=None, jobs=None, environ=None, stream=None) -> int:
    stream = stream or sys.stdout
    overrides = []
    if seed is not None:
        overrides.append(("seed", str(seed), "--seed"))
    if jobs is not None:
        overrides.append(("jobs", str(jobs), "--jobs"))
    if out is not None:
        overrides.append(("out", str(out), "--out"))
    cfg = load_config(config, environ, overrides)
    outdir = Path(cfg.out)
    (outdir / "records").mkdir(parents=True, exist_ok=True)
    (outdir / "plots").mkdir(parents=True, exist_ok=True)
    settings = cfg.settings()
    tasks = [(eid, cfg.sections[eid], cfg.seed, settings) for eid in cfg.experiments]
    if cfg.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            done = list(pool.map(_worker, tasks))
    else:
        done = [_worker(t) for t in tasks]
    results = [(eid, rep) for eid, rep, _ in done]     # config order, independent of scheduling
    lines = []
    for eid, rep, tb in done:
        text = rep.record_text()
        if tb:
            text += "traceback " + tb.replace("\n", "\n  ") + "\n"
        (outdir / "records" / f"{eid}.txt").write_text(text)
        write_plots(outdir / "plots", eid, rep)
        status = "PASS" if rep.passed else "FAIL"
        failed = [k for k, v in sorted(rep.flags.items()) if not v]
        lines.append(f"{status} {eid} ({rep.experiment}) {rep.domain} runtime={rep.runtime:.2f}s"
                     + (f" failed={','.join(failed)}" if failed else ""))
    write_summary(outdir / "summary.csv", results)
    ok = all(rep.passed for _, rep in results)
    report = [f"experiments {len(results)}", f"seed {cfg.seed}", f"status {'PASS' if ok else 'FAIL'}"] + lines
    (outdir / "report.txt").write_text("\n".join(report) + "\n")
    for line in report:
        print(line, file=stream)
    return 0 if ok else 1


def parse_record(text: str):
    rec = {"summary": {}, "flags": {}, "cases": [], "notes": []}
    for line in text.splitlines():
        if not line or line.startswith(" "):
            continue
        tag, _, rest = line.partition(" ")
        if tag in ("experiment", "domain", "coeff"):
            rec[tag] = rest
        elif tag == "summary":
            k, v = rest.rsplit(" ", 1)
            rec["summary"][k] = float(v)
        elif tag == "flag":
            k, v = rest.rsplit(" ", 1)
            rec["flags"][k] = v == "1"
        elif tag == "case":
            parts = rest.split(" ")
            case = {"case": parts[0]}
            for p in parts[1:]:
                k, _, v = p.partition("=")
                case[k] = v
            case["ratio"] = float(case["ratio"])
            rec["cases"].append(case)
        elif tag == "note":
            rec["notes"].append(rest)
        elif tag == "traceback":
            pass
        else:
            raise ValueError(f"unexpected line {line[:40]!r}")
    for need in ("experiment", "domain"):
        if need not in rec:
            raise ValueError(f"missing {need} line")
    return rec


def read_baseline(path):
    base = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            base[(row["id"], row["type"], row["key"])] = row["value"]
    return base


def regressions(records: dict, baseline: dict, rtol: float = 1e-9):
    out = []
    for eid, rec in sorted(records.items()):
        for k, v in sorted(rec["summary"].items()):
            old = baseline.get((eid, "summary", k))
            if old is None:
                continue
            old = float(old)
            if not (math.isfinite(old) and math.isfinite(v)):
                continue
            tol = rtol * max(abs(old), 1.0)
            worse = v < old - tol if k in HIGHER_IS_BETTER else v > old + tol
            if worse:
                out.append(f"{eid} {k}: {old!r} -> {v!r}")
        for k, v in sorted(rec["flags"].items()):
            if baseline.get((eid, "flag", k)) == "1" and not v:
                out.append(f"{eid} flag {k}: 1 -> 0")
    return out


def _kind_and_h(domain: str):
    fields = dict(p.strip().split("=", 1) for p in domain.split(",") if "=" in p)
    h = fields.pop("h", "nan")
    rest = ", ".join(f"{k}={v}" for k, v in sorted(fields.items()))
    return rest, float(Fraction(h)) if "/" in h else float(h)


def cmd_report(directory, baseline=None, stream=None) -> int:
    stream = stream or sys.stdout
    d = Path(directory)
    records, problems = {}, []
    rec_dir = d / "records"
    if not rec_dir.is_dir():
        problems.append(f"missing records directory {rec_dir}")
    else:
        for path in sorted(rec_dir.glob("*.txt")):
            try:
                records[path.stem] = parse_record(path.read_text())
            except (ValueError, KeyError) as err:
                problems.append(f"corrupt record {path.name}: {err}")
    lines = ["experiment | domain | case | ratio"]
    for eid, rec in sorted(records.items()):
        for c in rec["cases"]:
            lines.append(f"{rec['experiment']} | {rec['domain']} | {c['case']} | {c['ratio']!r}")
    # stability: the same experiment on one geometry at several resolutions
    groups = {}
    for eid, rec in sorted(records.items()):
        geom, h = _kind_and_h(rec["domain"])
        groups.setdefault((rec["experiment"], geom, rec.get("coeff", "")), []).append((h, eid, rec))
    stab = ["experiment | geometry | key | values by h | drift"]
    for (exp, geom, coeff), items in sorted(groups.items()):
        if len(items) < 2:
            continue
        items.sort(key=lambda t: -t[0])
        keys = sorted(set.intersection(*(set(r["summary"]) for _, _, r in items)))
        for k in keys:
            vals = [r["summary"][k] for _, _, r in items]
            hs = " ".join(f"h={h!r}:{v!r}" for (h, _, _), v in zip(items, vals))
            stab.append(f"{exp} | {geom} | {k} | {hs} | {ex.drift(vals)!r}")
    regs = []
    if baseline is not None:
        try:
            regs = regressions(records, read_baseline(baseline))
        except (OSError, KeyError, ValueError) as err:
            problems.append(f"unreadable baseline {baseline}: {err}")
    text = ["# records"] + lines + ["", "# stability"] + stab + ["", "# regressions"] + \
        (regs or ["none"]) + ["", "# problems"] + (problems or ["none"])
    out = "\n".join(text) + "\n"
    if d.is_dir():
        (d / "consolidated.txt").write_text(out)
    stream.write(out)
    return 1 if regs or problems else 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="roughbvp", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run the experiments listed in a config file")
    r.add_argument("config")
    r.add_argument("--out")
    r.add_argument("--seed", type=int)
    r.add_argument("--jobs", type=int)
    rp = sub.add_parser("report", help="merge the records of a run directory")
    rp.add_argument("dir")
    rp.add_argument("--baseline")
    args = ap.parse_args(argv)
    if args.cmd == "run":
        try:
            return cmd_run(args.config, args.out, args.seed, args.jobs)
        except ConfigError as err:
            print(f"error: {err}", file=sys.stderr)
            return 2
    return cmd_report(args.dir, args.baseline)


if __name__ == "__main__":
    sys.exit(main())
