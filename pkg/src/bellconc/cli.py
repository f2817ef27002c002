"""Command-line interface.

Every command writes its data files into the output directory (``--out`` or
the ``BELLCONC_OUT`` environment variable) next to a ``<command>.manifest.json``
that carries timestamps and the full configuration.  Data files never contain
wall-clock values, so reruns with the same flags and seed are byte-identical.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, bounds, catalog, nets
from .lhv import DegenerateFunctional, ScenarioTooLarge, classical_bounds, normalize, positivize
from .montecarlo import (
    ExperimentConfig,
    clopper_pearson,
    concentration_experiment,
    product_family,
    seesaw_measurements,
    tail_experiment,
)
from .quantum import behaviour_of, operator_norm, random_assemblage, sample_haar_state
from .scenario import BellFunctional, Scenario, check_nonsignalling
from .serialization import (
    ConfigError,
    dumps,
    functional_to_dict,
    load_functional,
    parse_config,
    write_csv,
    write_jsonl,
)

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int
    version: str
    started: str
    finished: str = ""
    outputs: list = field(default_factory=list)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


class _Run:
    """Collects outputs of one command and writes its manifest."""

    def __init__(self, args, command: str, config: dict):
        self.out = Path(os.environ.get("BELLCONC_OUT") or args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.manifest = RunManifest(command, config, args.seed, __version__, _now())
        self.manifest_name = f"{command}.manifest.json"

    def path(self, name: str) -> Path:
        self.manifest.outputs.append(name)
        return self.out / name

    def header(self) -> dict:
        return {"type": "header", "command": self.manifest.command, "manifest": self.manifest_name}

    def close(self):
        self.manifest.finished = _now()
        (self.out / self.manifest_name).write_text(dumps(asdict(self.manifest)) + "\n", encoding="utf-8")


def _emit(record: dict):
    print(dumps(record))


def _functional_arg(args) -> BellFunctional:
    if args.catalog:
        return catalog.get(args.catalog).raw
    return load_functional(args.file)


def _random_functional(scenario: Scenario, rng) -> BellFunctional:
    return normalize(BellFunctional(scenario, rng.normal(size=scenario.size), name="random"))


# ---------------------------------------------------------------------------
# commands


def cmd_classical_bound(args) -> int:
    T = _functional_arg(args)
    lo, hi = classical_bounds(T)
    Tn = normalize(T)
    run = _Run(args, "classical-bound", {"source": args.catalog or str(args.file)})
    name = f"{T.name or 'functional'}.normalized.json"
    run.path(name).write_text(dumps(functional_to_dict(Tn)) + "\n", encoding="utf-8")
    run.close()
    _emit({"name": T.name, "lower": lo, "upper": hi, "normalized_path": str(run.out / name)})
    return EXIT_OK


def cmd_positivize(args) -> int:
    T = _functional_arg(args)
    P = positivize(T)
    run = _Run(args, "positivize", {"source": args.catalog or str(args.file)})
    name = f"{T.name or 'functional'}.positivized.json"
    run.path(name).write_text(dumps(functional_to_dict(P)) + "\n", encoding="utf-8")
    run.close()
    info = P.provenance["positivize"]
    _emit({
        "name": T.name, "theta": info["theta"], "original_upper": info["original_upper"],
        "upper": P.classical_upper, "lower": P.classical_lower,
        "positivized_path": str(run.out / name),
    })
    return EXIT_OK


_TAIL_REQUIRED = ("N", "m", "v", "d", "c", "samples")
_TAIL_OPTIONAL = {
    "functionals": None, "restarts": 20, "max_iters": 200, "use_lp": False, "b": 1.0,
    "projective": False, "chunk_size": 25, "lp_rounds": 3, "time_budget": None, "seed": None,
}


def _tail_config(raw: dict, args) -> ExperimentConfig:
    for key in _TAIL_REQUIRED:
        if key not in raw:
            raise ConfigError(f"missing required key {key!r} in tail config")
    unknown = set(raw) - set(_TAIL_REQUIRED) - set(_TAIL_OPTIONAL)
    if unknown:
        raise ConfigError(f"unknown key(s) in tail config: {', '.join(sorted(unknown))}")
    opts = {**_TAIL_OPTIONAL, **{k: raw[k] for k in _TAIL_OPTIONAL if k in raw}}
    sc = Scenario(int(raw["N"]), int(raw["m"]), int(raw["v"]))
    names = opts["functionals"]
    if names is None:
        names = [] if opts["use_lp"] else catalog.names_for(sc)
    elif isinstance(names, str):
        names = [names]
    seed = args.seed if opts["seed"] is None else int(opts["seed"])
    return ExperimentConfig(
        scenario=sc, d=int(raw["d"]), functionals=tuple(names), use_lp=bool(opts["use_lp"]),
        b=float(opts["b"]), c=float(raw["c"]), samples=int(raw["samples"]),
        restarts=int(opts["restarts"]), max_iters=int(opts["max_iters"]), seed=seed,
        workers=args.workers, projective=bool(opts["projective"]),
        chunk_size=int(opts["chunk_size"]), lp_rounds=int(opts["lp_rounds"]),
        time_budget=None if opts["time_budget"] is None else float(opts["time_budget"]),
    )


def cmd_tail(args) -> int:
    cfg = _tail_config(parse_config(args.config), args)
    est = tail_experiment(cfg)
    run = _Run(args, "tail", cfg.echo())
    run.manifest.config["wall_clock_seconds"] = est.wall_clock
    write_jsonl(run.path("tail.jsonl"), [run.header()] + est.records + [est.summary()])
    vals = np.asarray(est.values)
    rows = []
    for c in np.round(np.linspace(0.0, 2.0, 41), 10):
        k = int(np.sum(vals > c))
        lo, hi = clopper_pearson(k, len(vals))
        rows.append([float(c), k / len(vals), lo, hi])
    write_csv(run.path("tail_curve.csv"), ["c", "p_hat", "ci_low", "ci_high"], rows,
              comment=f"manifest: {run.manifest_name}")
    run.close()
    _emit(est.summary())
    return EXIT_OK


def _parse_int_list(text: str) -> list[int]:
    if ":" in text:
        lo, hi = (int(s) for s in text.split(":"))
        return list(range(lo, hi + 1))
    return [int(s) for s in text.split(",")]


def cmd_bound(args) -> int:
    variants = args.variant or ["theorem"]
    if "all" in variants:
        variants = list(bounds.VARIANTS)
    Ns = _parse_int_list(args.sweep_N) if args.sweep_N else [args.N]
    ds = _parse_int_list(args.sweep_d) if args.sweep_d else [args.d]
    records, rows = [], []
    for N in Ns:
        for d in ds:
            p = bounds.TailBoundParams(N, args.m, args.v, d, args.b, args.c, args.delta)
            for var in variants:
                rec = bounds.theorem_bound(p, var).record()
                records.append(rec)
                rows.append([N, d, var, rec["log_value"]])
    run = _Run(args, "bound", {
        "N": Ns, "d": ds, "m": args.m, "v": args.v, "b": args.b, "c": args.c,
        "delta": args.delta, "variants": variants,
    })
    write_jsonl(run.path("bound.jsonl"), [run.header()] + records)
    if len(Ns) > 1 or len(ds) > 1:
        write_csv(run.path("bound_sweep.csv"), ["N", "d", "variant", "log_value"], rows,
                  comment=f"manifest: {run.manifest_name}")
    run.close()
    for rec in records:
        _emit(rec)
    return EXIT_OK


def cmd_concentration(args) -> int:
    Ns = _parse_int_list(args.N)
    records, rows = [], []
    for N in Ns:
        rng = np.random.default_rng(np.random.SeedSequence(args.seed, spawn_key=(N,)))
        sc = Scenario(N, 2, 2)
        A = None
        if args.functional == "product":
            T, A = product_family(N, args.d, rng=args.seed)
        elif args.functional == "random":
            T = _random_functional(sc, rng)
        else:
            entry = catalog.get(args.functional)
            if entry.scenario != sc:
                raise ConfigError(f"catalog functional {args.functional!r} needs N={entry.scenario.N}")
            T = entry.normalized()
        if A is None:
            A = random_assemblage(sc, args.d, rng)
        res = concentration_experiment(T, A, args.samples, rng)
        res.pop("values")
        tail = res.pop("tail")
        records.append(res)
        for pt in tail:
            rows.append([N, pt["eps"], pt["empirical"], pt["binomial_se"], pt["levy_log_bound"], pt["levy_bound"]])
    run = _Run(args, "concentration", {
        "N": Ns, "d": args.d, "samples": args.samples, "functional": args.functional,
    })
    write_jsonl(run.path("concentration.jsonl"), [run.header()] + records)
    write_csv(run.path("concentration_curve.csv"),
              ["N", "eps", "empirical", "binomial_se", "levy_log_bound", "levy_bound"], rows,
              comment=f"manifest: {run.manifest_name}")
    run.close()
    for rec in records:
        _emit(rec)
    return EXIT_OK


def cmd_net_demo(args) -> int:
    rng = np.random.default_rng(args.seed)
    net = nets.build_net(nets.cube_sampler(args.n), args.eps, args.budget, rng)
    probes = rng.uniform(-1, 1, size=(args.probes, args.n))
    dist = nets.covering_distance(net, probes)
    run = _Run(args, "net-demo", {"n": args.n, "eps": args.eps, "budget": args.budget, "probes": args.probes})
    run.path("net.json").write_text(net.to_json() + "\n", encoding="utf-8")
    run.close()
    _emit({
        "n": net.n, "eps": net.epsilon, "l": net.l, "size": len(net),
        "log_size_bound": nets.net_size_bound(net.n, net.epsilon),
        "max_probe_distance": float(dist.max()), "covered": bool(dist.max() <= net.epsilon),
    })
    return EXIT_OK


def _smoke_checks(seed: int, tol: float) -> list[dict]:
    rng = np.random.default_rng(seed)
    sc = Scenario(2, 2, 2)
    checks = []
    worst = 0.0
    for _ in range(20):
        T = _random_functional(sc, rng)
        A = random_assemblage(sc, 2, rng)
        worst = max(worst, operator_norm(T, A, rng=rng))
    ceiling = bounds.loubenets_bound(2, 2)
    checks.append({"check": "loubenets", "ok": worst <= ceiling + 1e-6,
                   "detail": {"max_operator_norm": worst, "ceiling": ceiling, "functionals": 20}})
    psi = sample_haar_state(2, 2, rng)
    A = random_assemblage(sc, 2, rng)
    ok, dev = check_nonsignalling(behaviour_of(psi, A), tol)
    checks.append({"check": "nonsignalling", "ok": ok, "detail": {"max_deviation": dev}})
    T = catalog.get("chsh").normalized()
    _, _, trace = seesaw_measurements(psi, T, A)
    checks.append({"check": "seesaw_monotone", "ok": bool(np.all(np.diff(trace) >= -1e-12)),
                   "detail": {"sweeps": len(trace) - 1}})
    for name in catalog.NAMES:
        P = positivize(catalog.get(name).raw)
        in_range = bool(P.coeffs.min() >= 0 and P.coeffs.max() <= 1)
        checks.append({"check": f"positivize:{name}", "ok": in_range and P.classical_upper == 1.0,
                       "detail": {"theta": P.provenance["positivize"]["theta"]}})
    return checks


def cmd_verify(args) -> int:
    entries = list(catalog._CATALOG.values())
    for path in args.fixture or []:
        T = load_functional(path)
        documented = T.provenance.get("documented_upper")
        if documented is None:
            raise ConfigError(f"{path}: fixture needs provenance.documented_upper")
        entries.append(catalog.CatalogEntry(T.name or str(path), T.scenario, T, float(documented), None, str(path)))
    checks = []
    for e in entries:
        lo, hi = classical_bounds(e.raw)
        checks.append({"check": f"catalog:{e.name}", "ok": hi == e.documented_upper,
                       "detail": {"lower": lo, "upper": hi, "documented_upper": e.documented_upper}})
    checks += _smoke_checks(args.seed, args.tol)
    run = _Run(args, "verify", {"fixtures": [str(p) for p in args.fixture or []]})
    write_jsonl(run.path("verify.jsonl"), [run.header()] + checks)
    run.close()
    for c in checks:
        print(f"{'PASS' if c['ok'] else 'FAIL'} {c['check']} {dumps(c['detail'])}")
    failed = [c["check"] for c in checks if not c["ok"]]
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
    return EXIT_FAIL if failed else EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _add_globals(p: argparse.ArgumentParser, suppress: bool):
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--seed", type=int, default=d(0), help="master seed (default 0)")
    p.add_argument("--workers", type=int, default=d(os.cpu_count() or 1), help="worker processes")
    p.add_argument("--out", default=d("bellconc-out"), help="output directory (BELLCONC_OUT overrides)")
    p.add_argument("--tol", type=float, default=d(1e-9), help="numerical tolerance for checks")


def _add_functional_source(p):
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--catalog", choices=catalog.NAMES, help="built-in functional")
    g.add_argument("--file", type=Path, help="functional JSON file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bellconc", description="Bell violation concentration toolkit")
    _add_globals(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("classical-bound", help="exact local bounds by enumeration")
    _add_functional_source(p)
    p.set_defaults(func=cmd_classical_bound)

    p = sub.add_parser("positivize", help="rewrite with coefficients in [0, 1]")
    _add_functional_source(p)
    p.set_defaults(func=cmd_positivize)

    p = sub.add_parser("tail", help="Monte Carlo tail estimate from a config file")
    p.add_argument("config", type=Path)
    p.set_defaults(func=cmd_tail)

    p = sub.add_parser("bound", help="closed-form tail bounds")
    p.add_argument("--N", type=int, default=2)
    p.add_argument("--m", type=int, default=2)
    p.add_argument("--v", type=int, default=2)
    p.add_argument("--d", type=int, default=37)
    p.add_argument("--b", type=float, default=1.0)
    p.add_argument("--c", type=float, default=2.0)
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--variant", action="append", choices=list(bounds.VARIANTS) + ["all"])
    p.add_argument("--sweep-N", help="range lo:hi or comma list of N")
    p.add_argument("--sweep-d", help="range lo:hi or comma list of d")
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("concentration", help="distribution of Q over Haar states")
    p.add_argument("--N", default="2:4", help="range lo:hi or comma list")
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--functional", default="product",
                   help="'product' (same local table at every party), 'random', or a catalog name")
    p.set_defaults(func=cmd_concentration)

    p = sub.add_parser("net-demo", help="build a net of the cube and probe its covering")
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--eps", type=float, default=0.5)
    p.add_argument("--budget", type=int, default=10_000)
    p.add_argument("--probes", type=int, default=10_000)
    p.set_defaults(func=cmd_net_demo)

    p = sub.add_parser("verify", help="catalog verification and smoke checks")
    p.add_argument("--fixture", type=Path, action="append",
                   help="extra functional file with provenance.documented_upper")
    p.set_defaults(func=cmd_verify)

    for sp in sub.choices.values():
        _add_globals(sp, suppress=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, bounds.BoundDomainError, catalog.CatalogError, ScenarioTooLarge,
            DegenerateFunctional, ValueError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"bellconc {args.command}: error: {msg}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
