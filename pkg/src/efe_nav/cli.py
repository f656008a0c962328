"""``efe-nav`` command line: run experiments, export heatmaps, verify identities.

Exit codes: 0 success, 1 configuration error, 2 I/O error, 3 all trials of an
agent diverged, 4 an analytic identity failed.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import scenario as scenario_mod
from . import verify as verify_mod
from .planners import AgentKind
from .scenario import ScenarioError, ScenarioFile
from .sim import TrialRecord, efe_heatmap, nearest_regular_cells, run_monte_carlo

log = logging.getLogger("efe_nav")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DIVERGED, EXIT_IDENTITY = 0, 1, 2, 3, 4
DEFAULT_SCENARIO = "paper_fig3_efe2"


class _ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def fmt(x) -> str:
    return "%.17g" % x


def write_table(path: Path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(fmt(v) for v in row) for row in rows)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, allow_nan=True) + "\n", encoding="utf-8")


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    return v


# --- run ---------------------------------------------------------------------

TRIAL_HEADER = (
    ["k"] + [f"x{i}" for i in range(1, 5)] + [f"m{i}" for i in range(1, 5)]
    + [f"S{i}{i}" for i in range(1, 5)] + ["u1", "u2", "y_distance", "y_bearing", "risk", "ambiguity"]
)


def trial_rows(rec: TrialRecord, x0, prior):
    nan = float("nan")
    yield [0, *x0, *prior.mean, *np.diag(prior.cov), nan, nan, nan, nan, nan, nan]
    for k in range(rec.n_steps):
        yield [k + 1, *rec.states[k], *rec.means[k], *np.diag(rec.covs[k]), *rec.controls[k],
               *rec.observations[k], rec.risk[k], rec.ambiguity[k]]


def _mean_table(summary, x0):
    n = summary.n_completed
    zeros = np.zeros(len(x0))
    rows = [[0, *x0, *zeros, *zeros, n]]
    for k in range(len(summary.mean)):
        rows.append([k + 1, *summary.mean[k], *summary.std[k], *summary.stderr[k], n])
    header = (["k"] + [f"mean_x{i}" for i in range(1, 5)] + [f"std_x{i}" for i in range(1, 5)]
              + [f"stderr_x{i}" for i in range(1, 5)] + ["n_trials"])
    return header, rows


def run_agent(sf: ScenarioFile, out: Path, workers=None) -> dict:
    scn = sf.build()
    summary = run_monte_carlo(scn, sf.trials, workers)
    out.mkdir(parents=True, exist_ok=True)
    (out / "trials").mkdir(exist_ok=True)
    for stale in (out / "trials").glob("seed_*.csv"):
        stale.unlink()
    for rec in summary.trials:
        write_table(out / "trials" / f"seed_{rec.seed:06d}.csv", TRIAL_HEADER, trial_rows(rec, scn.x0, scn.prior))
    header, rows = _mean_table(summary, scn.x0)
    write_table(out / "mean_trajectory.csv", header, rows)
    doc = {
        "agent": sf.agent.kind,
        "seed": sf.seed,
        "stats": _jsonable(summary.stats),
        "trials": [dict(seed=r.seed, error=r.error, **_jsonable(r.summary)) for r in summary.trials],
        "scenario": sf.to_dict(),
    }
    write_json(out / "summary.json", doc)
    return doc


def _agents(arg, default):
    if not arg:
        return [default]
    names = [a.strip().lower() for a in arg.split(",") if a.strip()]
    for a in names:
        try:
            AgentKind(a)
        except ValueError:
            raise _ConfigError(f"unknown agent {a!r}; choose from {[k.value for k in AgentKind]}") from None
    return names


def cmd_run(args) -> int:
    sf = _load(args)
    sf = sf.with_overrides(trials=args.trials, seed=args.seed)
    agents = _agents(args.agents, sf.agent.kind)
    out = Path(args.out or sf.output.dir)
    code = EXIT_OK
    for a in agents:
        sfa = sf.with_overrides(agent=a)
        doc = run_agent(sfa, out / a)
        st = doc["stats"]
        print(f"{a}: {st['n_trials']} trials, {st['n_diverged']} diverged, lost track {st['lost_track']}, "
              f"max |x1| of mean {st['max_abs_x1_of_mean']:.3f}, "
              f"mean position stderr {st['mean_position_stderr']:.4f} -> {out / a}")
        if st["n_completed"] == 0 and st["n_diverged"] == st["n_trials"]:
            code = EXIT_DIVERGED
    return code


# --- heatmap -----------------------------------------------------------------

def _parse_range(text):
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError:
        raise _ConfigError(f"--range expects A:B, got {text!r}") from None
    if not lo < hi:
        raise _ConfigError("--range must be increasing")
    return lo, hi


def cmd_heatmap(args) -> int:
    sf = _load(args)
    hs = sf.heatmap
    agents = [a.strip().lower() for a in args.agents.split(",")] if args.agents else list(hs.agents)
    for a in agents:
        if a not in ("efe1", "efer", "efe2"):
            raise _ConfigError(f"heatmaps are defined for efe1, efer and efe2, not {a!r}")
    rng = _parse_range(args.range) if args.range else hs.range
    res = hs.resolution if args.res is None else args.res
    if res < 2:
        raise _ConfigError("--res must be at least 2")
    model, goal = sf.sensor_model(), sf.goal_prior()
    cov = scenario_mod._cov_matrix(hs.cov, model.dim_x)
    out = Path(args.out or sf.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    station = tuple(sf.sensor.station)
    doc = {"range": list(rng), "resolution": res, "station": list(station), "agents": {}}
    for a in agents:
        hm = efe_heatmap(model, goal, AgentKind(a), rng, rng, res, cov)
        rows = ([x1, x2, hm.values[i, j]] for i, x2 in enumerate(hm.x2) for j, x1 in enumerate(hm.x1))
        write_table(out / f"heatmap_{a}.csv", ["x1", "x2", "value"], rows)
        cells = nearest_regular_cells(hm, station)
        doc["agents"][a] = {
            "argmin": list(hm.argmin),
            "min_value": float(hm.values.min()),
            "near_station": [{"x1": float(hm.x1[j]), "x2": float(hm.x2[i]), "value": float(hm.values[i, j])}
                             for i, j in cells],
        }
        print(f"{a}: argmin ({fmt(hm.argmin[0])}, {fmt(hm.argmin[1])}) -> {out / f'heatmap_{a}.csv'}")
    write_json(out / "heatmap_summary.json", doc)
    return EXIT_OK


# --- verify ------------------------------------------------------------------

_TRANSFORM_SUITES = {
    "taylor1": ("taylor1",), "t1": ("taylor1",), "taylor2": ("taylor2",), "t2": ("taylor2",),
    "ut": ("unscented",), "unscented": ("unscented",), "split": ("split",), "all": verify_mod.SUITES,
}


def cmd_verify(args) -> int:
    which = _TRANSFORM_SUITES.get((args.transform or "all").lower())
    if which is None:
        raise _ConfigError(f"--transform must be one of {sorted(_TRANSFORM_SUITES)}")
    if args.n < 2:
        raise _ConfigError("--n must be at least 2")
    results = verify_mod.run_suites(which, n=args.n, seed=args.seed or 0, corrupt_r=args.corrupt_r)
    print(verify_mod.format_table(results))
    failed = [r for r in results if not r.passed]
    if failed:
        worst = max(failed, key=lambda r: r.max_deviation / r.tolerance)
        print(f"FAILED {len(failed)} of {len(results)}; worst: {worst.name} ({worst.transform}) "
              f"deviation {worst.max_deviation:.3e}")
        return EXIT_IDENTITY
    print(f"all {len(results)} identities hold")
    return EXIT_OK


# --- plumbing ----------------------------------------------------------------

def _load(args) -> ScenarioFile:
    return scenario_mod.resolve(args.scenario or DEFAULT_SCENARIO)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="efe-nav", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--scenario", help=f"scenario file or bundled name (default {DEFAULT_SCENARIO})")
        sp.add_argument("--out", help="output directory (default from the scenario)")

    r = sub.add_parser("run", help="Monte-Carlo trials, per-trial and mean-trajectory tables")
    common(r)
    r.add_argument("--trials", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--agents", help="comma-separated agent kinds (mpc, efe1, efer, efe2)")
    r.set_defaults(func=cmd_run)

    h = sub.add_parser("heatmap", help="EFE value over a position grid")
    common(h)
    h.add_argument("--agents", help="comma-separated EFE agents")
    h.add_argument("--range", help="grid extent A:B in m, both axes")
    h.add_argument("--res", type=int, help="grid points per axis")
    h.set_defaults(func=cmd_heatmap)

    v = sub.add_parser("verify", help="check the ambiguity identities on random beliefs")
    v.add_argument("--transform", default="all", help="taylor1, taylor2, ut, split or all")
    v.add_argument("--n", type=int, default=200, help="number of random beliefs")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--corrupt-r", type=float, default=None, metavar="FACTOR",
                   help="testing aid: scale the sensor noise seen by the transforms")
    v.set_defaults(func=cmd_verify)
    return p


def _join_range(argv):
    """Allow ``--range -2:2`` (argparse would read -2:2 as an option)."""
    out, it = [], iter(argv)
    for tok in it:
        if tok == "--range":
            nxt = next(it, None)
            out.append(tok if nxt is None else f"--range={nxt}")
        else:
            out.append(tok)
    return out


def main(argv=None) -> int:
    argv = _join_range(sys.argv[1:] if argv is None else list(argv))
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ScenarioError, _ConfigError) as exc:
        print(f"efe-nav: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"efe-nav: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
