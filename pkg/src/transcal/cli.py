"""Command-line runner: data generation, surrogates, calibration and scoring.

Output layout under ``--out``::

    design_<d>/data_t<t>.csv (+ .json)      virtual measurements
    design_<d>/surrogates.json              fitted GPs
    design_<d>/t<t>/<method>/...            chains, MAP trace, predictions
    design_<d>/t<t>/confidence_map.csv      gamma over a grid of alpha
    design_<d>/t<t>/loo_<method>.csv/.json  leave-one-out reports
    report.csv, report.json                 cross-method summary
    manifest_<command>.json                 config hash, seeds, versions, counters
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__, hier
from .config import ExperimentConfig, load_config
from .errors import ConfigError, NumericalError
from .gp import FitConfig, SurrogateSet, fit_surrogate_set
from .likelihood import CountingPredictor, EvalCounter, ExactSource, build_model
from .methods import HIER_METHODS, METHODS, calibrate
from .metrics import loo_evaluate_many
from .seeding import derive
from .testbed import (GroundTruthConfig, canonical_simulator, generate_observations, lhs_design,
                      load_observations, save_observations)

log = logging.getLogger("transcal")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


def _int_seed(seed, *keys) -> int:
    return int(derive(seed, *keys).generate_state(1)[0])


def _fmt(v) -> str:
    return f"{float(v):.17g}"


class Run:
    """Paths, seeds and shared state for one invocation."""

    def __init__(self, cfg: ExperimentConfig, command: str):
        self.cfg = cfg
        self.command = command
        self.out = Path(cfg.output_dir)
        self.counters: dict = {}
        self.outputs: list = []
        self.seeds: dict = {}

    # seeds -----------------------------------------------------------------
    def design_seed(self, d):
        return self.seeds.setdefault(f"design_{d}", _int_seed(self.cfg.seed, d, 0))

    def noise_seed(self, d, t):
        return self.seeds.setdefault(f"noise_{d}_t{t}", _int_seed(self.cfg.seed, d, 1, t))

    def surrogate_seed(self, d):
        return self.seeds.setdefault(f"surrogate_{d}", _int_seed(self.cfg.seed, d, 2))

    def method_seed(self, d, t):
        self.seeds.setdefault(f"method_{d}_t{t}", [self.cfg.seed, d, 3, t])
        return derive(self.cfg.seed, d, 3, t)

    def confidence_seed(self, d, t):
        self.seeds.setdefault(f"confidence_{d}_t{t}", [self.cfg.seed, d, 4, t])
        return derive(self.cfg.seed, d, 4, t)

    # paths -----------------------------------------------------------------
    def design_dir(self, d) -> Path:
        return self.out / f"design_{d}"

    def case_dir(self, d, t) -> Path:
        return self.design_dir(d) / f"t{t}"

    def track(self, path: Path) -> Path:
        path.parent.mkdir(parents=True, exist_ok=True)
        self.outputs.append(str(path))
        return path

    # data and surrogates ---------------------------------------------------
    def problem(self, t):
        return canonical_simulator(t)

    def observations(self, d, t):
        path = self.design_dir(d) / f"data_t{t}.csv"
        if path.exists():
            return load_observations(path)
        return self.generate(d, t)

    def generate(self, d, t):
        tb = self.cfg.testbed
        design = lhs_design(tb.n, 3, self.design_seed(d))
        obs = generate_observations(self.problem(t), GroundTruthConfig(tb.lambda0, tb.delta_v),
                                    design, tb.sigma_for(t), self.noise_seed(d, t))
        path = self.track(self.design_dir(d) / f"data_t{t}.csv")
        save_observations(obs, path)
        self.outputs.append(str(path.with_suffix(".json")))
        return obs

    def points(self, d) -> dict:
        obs = self.observations(d, self.cfg.testbed.t_obs[0])
        pts = dict(enumerate(obs.points))
        for i, x in enumerate(self.cfg.x0):
            pts[obs.n + i] = np.asarray(x, dtype=float)
        return pts

    def fit(self, d) -> SurrogateSet:
        sc = self.cfg.surrogate
        fc = FitConfig(n_starts=sc.n_starts, lengthscale_bounds=(sc.lengthscale_low, sc.lengthscale_high),
                       seed=self.surrogate_seed(d))
        sset = fit_surrogate_set(self.problem(1), self.points(d), sc.n_train,
                                 self.surrogate_seed(d), fc)
        self.track(self.design_dir(d) / "surrogates.json").write_text(sset.to_json())
        return sset

    def source(self, d):
        if self.cfg.surrogate.exact:
            return ExactSource(self.problem(1), self.points(d))
        path = self.design_dir(d) / "surrogates.json"
        if path.exists():
            sset = SurrogateSet.from_json(path.read_text())
            if set(sset.points) >= set(self.points(d)):
                return sset
        return self.fit(d)

    def add_counts(self, counter: EvalCounter, key: str):
        self.counters[key] = counter.as_dict()

    def manifest(self):
        info = {
            "command": self.command,
            "config_sha256": self.cfg.digest(),
            "config": self.cfg.to_dict(),
            "seeds": self.seeds,
            "versions": {"transcal": __version__, "python": platform.python_version(),
                         "numpy": np.__version__, "scipy": scipy.__version__},
            "evaluation_counts": self.counters,
            "outputs": sorted(set(self.outputs)),
        }
        path = self.out / f"manifest_{self.command.replace('-', '_')}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(info, indent=2, sort_keys=True, default=list) + "\n")


# ----------------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------------

def cmd_generate_data(run: Run):
    for d in range(run.cfg.n_designs):
        for t in run.cfg.testbed.t_obs:
            run.generate(d, t)


def cmd_fit_surrogates(run: Run):
    for d in range(run.cfg.n_designs):
        run.fit(d)


def _write_predictions(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "point", "x1", "x2", "x3", "t", "mean", "std"])
        for kind, pid, x, t, mean, var in rows:
            w.writerow([kind, pid, *(_fmt(v) for v in x), t, _fmt(mean), _fmt(np.sqrt(var))])


def cmd_calibrate(run: Run):
    cfg = run.cfg
    for d in range(cfg.n_designs):
        source = run.source(d)
        points = run.points(d)
        for t in cfg.testbed.t_obs:
            obs = run.observations(d, t)
            problem = run.problem(t)
            cache: dict = {}
            for method in cfg.methods:
                counter = EvalCounter()
                model = build_model(obs, source, counter)
                res = calibrate(method, problem, model, cfg.method, run.method_seed(d, t), counter, cache)
                outdir = run.case_dir(d, t) / method
                names = ([f"lambda1_{i + 1}" for i in range(problem.q)]
                         + [f"lambda2_{i + 1}" for i in range(problem.q)]
                         if method == "embedded" else
                         [f"lambda{i + 1}" for i in range(res.chain.samples.shape[1])])
                res.chain.to_csv(run.track(outdir / "chain.csv"), names)
                rows = []
                with counter.stage("predict"):
                    fitted = CountingPredictor(source.stack(t, range(obs.n)), counter)
                    mean, var = res.predict(fitted)
                    rows += [("fitted", j, points[j], t, mean[j], var[j]) for j in range(obs.n)]
                    x0_ids = [obs.n + i for i in range(len(cfg.x0))]
                    for tt in range(1, problem.T + 1):
                        if not x0_ids:
                            break
                        mean, var = res.predict(CountingPredictor(source.stack(tt, x0_ids), counter))
                        rows += [("x0", pid, points[pid], tt, mean[i], var[i])
                                 for i, pid in enumerate(x0_ids)]
                _write_predictions(run.track(outdir / "predictions.csv"), rows)
                summary = {"method": method, "design": d, "t_obs": t,
                           "acceptance_rate": res.chain.acceptance_rate,
                           "n_samples": res.ensemble.M, "evaluation_counts": counter.as_dict(),
                           **res.info}
                if res.map_result is not None:
                    run.track(outdir / "map_trace.json").write_text(
                        json.dumps(res.map_result.to_dict(), indent=2) + "\n")
                if res.ensemble.alpha_samples is not None:
                    with open(run.track(outdir / "alpha_samples.csv"), "w", newline="") as fh:
                        w = csv.writer(fh)
                        w.writerow([f"alpha{i + 1}" for i in range(problem.q - problem.p)])
                        w.writerows([[_fmt(v) for v in a] for a in res.ensemble.alpha_samples])
                    with open(run.track(outdir / "column_weights.csv"), "w", newline="") as fh:
                        w = csv.writer(fh)
                        w.writerow(["k", "weight"])
                        w.writerows([[k, _fmt(v)] for k, v in enumerate(res.ensemble.column_weights)])
                run.track(outdir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
                run.add_counts(counter, f"design_{d}/t{t}/{method}")


def _find_map_trace(run: Run, d, t) -> Path:
    for method in HIER_METHODS:
        path = run.case_dir(d, t) / method / "map_trace.json"
        if path.exists():
            return path
    raise ConfigError(f"no MAP trace for design {d}, t_obs {t}; run 'calibrate' with a "
                      "hierarchical method first")


def alpha_grid(box, points_per_dim: int) -> np.ndarray:
    axes = [np.linspace(lo, hi, points_per_dim) for lo, hi in box]
    return np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, len(axes))


def cmd_confidence_map(run: Run):
    cfg = run.cfg
    summary_all = {}
    for d in range(cfg.n_designs):
        source = run.source(d)
        for t in cfg.testbed.t_obs:
            trace = json.loads(_find_map_trace(run, d, t).read_text())
            problem = run.problem(t)
            prior = hier.HierPrior(problem.p, problem.q, cfg.method.sigma_prior)
            alpha_star = np.asarray(trace["alpha_star"], dtype=float)
            counter = EvalCounter()
            model = build_model(run.observations(d, t), source, counter)
            with counter.stage("confidence"):
                bank = hier.is_bank_build(prior, alpha_star, cfg.method.L_prime, model,
                                          run.confidence_seed(d, t))
            box = hier.alpha_box_around(prior, alpha_star, cfg.method.kappa)
            grid = alpha_grid(box, cfg.confidence.grid_points)
            gamma = hier.confidence_levels(bank, grid, cfg.method.beta)
            with open(run.track(run.case_dir(d, t) / "confidence_map.csv"), "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow([f"alpha{i + 1}" for i in range(prior.r)] + ["gamma"])
                w.writerows([[*(_fmt(v) for v in a), _fmt(g)] for a, g in zip(grid, gamma)])
            summ = {"alpha_star": alpha_star.tolist(), "beta": cfg.method.beta,
                    "L_prime": cfg.method.L_prime, "min_gamma": float(gamma.min()),
                    "zeta": cfg.confidence.zeta,
                    "all_above_zeta": bool(gamma.min() >= cfg.confidence.zeta)}
            run.track(run.case_dir(d, t) / "confidence_summary.json").write_text(
                json.dumps(summ, indent=2) + "\n")
            summary_all[f"design_{d}/t{t}"] = summ
            run.add_counts(counter, f"design_{d}/t{t}")
            print(f"design {d} t_obs {t}: min gamma {summ['min_gamma']:.4f} "
                  f"({'>=' if summ['all_above_zeta'] else '<'} zeta={cfg.confidence.zeta})")


def cmd_loo_evaluate(run: Run):
    cfg = run.cfg
    for d in range(cfg.n_designs):
        source = run.source(d)
        for t in cfg.testbed.t_obs:
            counter = EvalCounter()
            reports = loo_evaluate_many(run.problem(t), run.observations(d, t), cfg.methods,
                                        cfg.method, run.method_seed(d, t), source, counter)
            for method, rep in reports.items():
                base = run.case_dir(d, t) / f"loo_{method}"
                rep.write_csv(run.track(base.with_suffix(".csv")))
                rep.write_json(run.track(base.with_suffix(".json")))
                rmsre = ", ".join(f"t{k}={100 * v:.2f}%" for k, v in rep.rmsre.items())
                print(f"design {d} t_obs {t} {method:16s} RMSRE {rmsre}")
            run.add_counts(counter, f"design_{d}/t{t}")


def cmd_report(run: Run):
    rows = []
    for path in sorted(run.out.glob("design_*/t*/loo_*.json")):
        design = int(path.parent.parent.name.split("_")[1])
        summ = json.loads(path.read_text())
        for t, v in summ["rmsre"].items():
            rows.append({"design": design, "t_obs": summ["t_obs"], "method": summ["method"],
                         "t": int(t), "rmsre_percent": 100.0 * v,
                         "p09_percent": 100.0 * summ["p09"][t], "complete": summ["complete"]})
    if not rows:
        raise ConfigError(f"no leave-one-out reports under {run.out}; run 'loo-evaluate' first")
    with open(run.track(run.out / "report.csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(v) if isinstance(v, float) else v for k, v in r.items()})
    agg: dict = {}
    for r in rows:
        key = f"t_obs={r['t_obs']}"
        agg.setdefault(key, {}).setdefault(r["method"], {}).setdefault(str(r["t"]), []).append(r)
    table = {k: {m: {t: {"rmsre_percent": float(np.mean([r["rmsre_percent"] for r in rs])),
                         "p09_percent": float(np.mean([r["p09_percent"] for r in rs])),
                         "n_designs": len(rs)}
                     for t, rs in per_t.items()}
                 for m, per_t in per_m.items()}
             for k, per_m in agg.items()}
    run.track(run.out / "report.json").write_text(json.dumps(table, indent=2, sort_keys=True) + "\n")
    for k, per_m in table.items():
        print(k)
        for m in METHODS:
            if m in per_m:
                cells = "  ".join(f"t{t}: {v['rmsre_percent']:6.2f}% / {v['p09_percent']:5.1f}%"
                                  for t, v in sorted(per_m[m].items()))
                print(f"  {m:16s} {cells}")


COMMANDS = {
    "generate-data": (cmd_generate_data, "write virtual measurements for each transposition"),
    "fit-surrogates": (cmd_fit_surrogates, "fit one GP per output and control point"),
    "calibrate": (cmd_calibrate, "run calibration methods and write posterior artifacts"),
    "confidence-map": (cmd_confidence_map, "confidence levels of the MAP over a grid of alpha"),
    "loo-evaluate": (cmd_loo_evaluate, "leave-one-out RMSRE and interval probabilities"),
    "report": (cmd_report, "summarize leave-one-out reports across methods"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="INI experiment configuration")
    common.add_argument("--seed", type=int, metavar="U64", help="override [experiment] seed")
    common.add_argument("--method", choices=METHODS, help="run only this method")
    common.add_argument("--t-obs", type=int, choices=(1, 2, 3), help="observed output index")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="transcal", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=help_text)
    return parser


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        cfg.seed = args.seed
    if args.method is not None:
        cfg.methods = (args.method,)
    if args.t_obs is not None:
        cfg.testbed = replace(cfg.testbed, t_obs=(args.t_obs,))
    if args.out is not None:
        cfg.output_dir = args.out
    return cfg.validate()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        run = Run(cfg, args.command)
        COMMANDS[args.command][0](run)
        run.manifest()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
