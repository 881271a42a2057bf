"""Command-line front end.

    iteforest [--seed S] [--threads K] [--config FILE] COMMAND [options]

Commands: simulate, estimate, benchmark, infer, coplot.  A config file is a
flat ``key = value`` document whose keys are the long option names of the
chosen command (dashes or underscores); explicit flags win over the file.
Every run writes ``<output>.manifest.json`` echoing the resolved settings.
Failures print ``error: CODE: message`` on one line and exit nonzero.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .estimators import ESTIMATORS, Method, export_ite, import_external_ite
from .exceptions import ConfigurationError, IteForestError
from .forest import ForestSpec, set_threads
from .inference import (InferenceConfig, coplot_export, export_dataset, load_dataset,
                        subsample_inference)
from .simbench import ExperimentConfig, run_experiment, simulate
from .synthetic import SyntheticSpec

METHODS = [m.value for m in ESTIMATORS]


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.replace(",", " ").split())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected integers, got {text!r}") from None


def _str_list(text: str) -> tuple[str, ...]:
    return tuple(v for v in text.replace(",", " ").split())


def _bool(text: str) -> bool:
    low = str(text).lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _forest_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n-trees", type=int, help="trees per forest (default 1000)")
    p.add_argument("--mtry", type=int, help="candidate variables per node")
    p.add_argument("--nodesize", type=int, help="minimum terminal node size")
    p.add_argument("--nodesize-grid", type=_int_list, help="synthetic base-learner nodesizes")
    p.add_argument("--mtry-grid", type=_int_list, help="synthetic base-learner mtry values")
    p.add_argument("--base-n-trees", type=int, help="trees per synthetic base learner")
    p.add_argument("--iterations", type=int, help="bivariate imputation iterations")


def _data_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="delimited dataset with header")
    p.add_argument("--schema", help="JSON schema sidecar (default DATA.schema.json)")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"error: usage: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="iteforest", description=__doc__.split("\n")[0])
    parser.add_argument("--seed", type=int, default=None, help="base random seed (default 0)")
    parser.add_argument("--threads", type=int, default=None, help="worker threads")
    parser.add_argument("--config", help="flat key = value file of command options")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a simulated dataset with its ground truth")
    p.add_argument("--model", choices=["M1", "M2", "M3"])
    p.add_argument("--n", type=int)
    p.add_argument("--sigma", type=float)
    p.add_argument("--out", required=True)

    p = sub.add_parser("estimate", help="estimate individual treatment effects")
    _data_options(p)
    p.add_argument("--method", choices=METHODS)
    _forest_options(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("benchmark", help="run a simulation experiment grid")
    p.add_argument("--models", type=_str_list)
    p.add_argument("--estimators", type=_str_list)
    p.add_argument("--n", type=int)
    p.add_argument("--B", type=int)
    p.add_argument("--M", type=int)
    p.add_argument("--sigma", type=float)
    p.add_argument("--jobs", type=int, help="worker processes over replicates")
    _forest_options(p)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("infer", help="subsampling inference for an ITE regression")
    _data_options(p)
    p.add_argument("--method", choices=METHODS)
    _forest_options(p)
    p.add_argument("--fraction", type=float, help="subsample fraction (default 0.1)")
    p.add_argument("--replicates", type=int, help="subsampling replicates (default 1000)")
    p.add_argument("--response", choices=["tau_hat", "y1_hat", "y0_hat"])
    p.add_argument("--rescale", type=_bool, help="scale SD by sqrt(m/n) (default true)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("coplot", help="export conditioning-plot records")
    _data_options(p)
    p.add_argument("--tau", required=True, help="one effect estimate per line")
    p.add_argument("--x-var", required=True)
    p.add_argument("--panel-var")
    p.add_argument("--cond-v")
    p.add_argument("--cond-h")
    p.add_argument("--bins", type=int)
    p.add_argument("--overlap", type=float)
    p.add_argument("--out", required=True)
    return parser


DEFAULTS = {
    "simulate": {"model": "M1", "n": 500, "sigma": 0.1},
    "estimate": {"method": "syncf"},
    "benchmark": {"models": ("M1", "M2", "M3"), "estimators": ("vt", "vt_i", "cf", "syncf", "bivariate", "honest"),
                  "n": 500, "B": 50, "M": 20, "sigma": 0.1, "jobs": 1},
    "infer": {"method": "syncf", "fraction": 0.1, "replicates": 1000,
              "response": "tau_hat", "rescale": True},
    "coplot": {"bins": 4, "overlap": 0.0},
}


def read_config(path) -> dict[str, str]:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _resolve(parser, args) -> dict:
    """Merge defaults < config file < explicit flags for the chosen command."""
    sub = parser._subparsers._group_actions[0].choices[args.command]
    actions = {a.dest: a for a in sub._actions if a.dest != "help"}
    values = dict(DEFAULTS.get(args.command, {}))
    values["seed"] = 0
    if args.config:
        for key, text in read_config(args.config).items():
            if key == "seed":
                values["seed"] = int(text)
                continue
            if key == "threads":
                if args.threads is None:
                    set_threads(int(text))
                continue
            if key not in actions:
                raise ConfigurationError(f"unknown config key {key!r} for {args.command}")
            conv = actions[key].type or str
            try:
                values[key] = conv(text)
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise ConfigurationError(f"config key {key!r}: {exc}") from None
            if actions[key].choices and values[key] not in actions[key].choices:
                raise ConfigurationError(f"config key {key!r}: invalid choice {text!r}")
    for dest in actions:
        v = getattr(args, dest, None)
        if v is not None:
            values[dest] = v
    if args.seed is not None:
        values["seed"] = args.seed
    return values


def _jsonable(v):
    if isinstance(v, tuple):
        return list(v)
    return v


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(target, command: str, values: dict, outputs: list) -> Path:
    """Resolved settings plus output digests; no timestamps or thread counts."""
    manifest = {
        "program": "iteforest",
        "version": __version__,
        "command": command,
        "settings": {k: _jsonable(values[k]) for k in sorted(values)},
        "outputs": {Path(o).name: _sha256(o) for o in outputs},
    }
    path = Path(f"{target}.manifest.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _forest_spec(method: Method, v: dict, seed: int):
    if method is Method.SYNCF:
        kw = {"seed": seed}
        for key, name in (("nodesize_grid", "nodesize_grid"), ("mtry_grid", "mtry_grid"),
                          ("base_n_trees", "base_n_trees"), ("n_trees", "final_n_trees"),
                          ("mtry", "final_mtry"), ("nodesize", "final_nodesize")):
            if v.get(key) is not None:
                kw[name] = v[key]
        return SyntheticSpec(**kw)
    nodesize = 1 if method in (Method.BIVARIATE, Method.HONEST) else 3
    return ForestSpec(v.get("n_trees") or 1000, v.get("mtry"),
                      v.get("nodesize") or nodesize, seed)


def _load(v: dict):
    schema = v.get("schema") or f"{v['data']}.schema.json"
    return load_dataset(v["data"], schema)


def cmd_simulate(v):
    sim = simulate(v["model"], v["n"], v["seed"], v["sigma"])
    out = Path(v["out"])
    schema = Path(f"{out}.schema.json")
    truth = Path(f"{out}.truth.csv")
    export_dataset(sim.dataset, out, schema)
    with open(truth, "w") as fh:
        fh.write("true_tau,propensity\n")
        for a, b in zip(sim.true_tau, sim.true_propensity):
            fh.write(f"{float(a)!r},{float(b)!r}\n")
    return out, [out, schema, truth]


def cmd_estimate(v):
    data = _load(v)
    method = Method(v["method"])
    if method is Method.EXTERNAL:
        raise ConfigurationError("use import_external_ite for external predictions")
    kwargs = {"spec": _forest_spec(method, v, v["seed"])}
    if method is Method.BIVARIATE and v.get("iterations"):
        kwargs["n_iterations"] = v["iterations"]
    result = ESTIMATORS[method](data, **kwargs)
    export_ite(result, v["out"])
    return Path(v["out"]), [v["out"]]


def cmd_benchmark(v):
    kw = dict(models=tuple(v["models"]), estimators=tuple(v["estimators"]), n=v["n"],
              B=v["B"], M=v["M"], sigma=v["sigma"], seed=v["seed"], jobs=v["jobs"])
    for key, name in (("n_trees", "n_trees"), ("nodesize", "nodesize"),
                      ("nodesize_grid", "nodesize_grid"), ("mtry_grid", "mtry_grid"),
                      ("base_n_trees", "base_n_trees"), ("iterations", "bivariate_iterations")):
        if v.get(key) is not None:
            kw[name] = v[key]
    if v.get("mtry") is not None:
        raise ConfigurationError("benchmark uses each estimator's default mtry")
    result = run_experiment(ExperimentConfig(**kw))
    out = Path(v["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    results, summary = out / "results.csv", out / "summary.csv"
    result.table.to_csv(results, index=False, float_format="%.17g", lineterminator="\n")
    result.summary.to_csv(summary, index=False, float_format="%.17g", lineterminator="\n")
    outputs = [results, summary]
    if result.failures:
        failures = out / "failures.csv"
        failures.write_text("model,estimator,replicate,error\n" + "".join(
            f"{m},{e},{b},{json.dumps(msg)}\n" for m, e, b, msg in result.failures))
        outputs.append(failures)
    return out / "run", outputs


def cmd_infer(v):
    data = _load(v)
    method = Method(v["method"])
    config = InferenceConfig(v["fraction"], v["replicates"], method.value,
                             _forest_spec(method, v, v["seed"]), v["response"],
                             v["rescale"], seed=v["seed"])
    table = subsample_inference(data, config)
    table.write(v["out"])
    return Path(v["out"]), [v["out"]]


def cmd_coplot(v):
    data = _load(v)
    tau = import_external_ite(v["tau"], data.n).tau_hat
    coplot_export(tau, data, v["x_var"], v.get("panel_var"), v.get("cond_v"),
                  v.get("cond_h"), v["bins"], v["overlap"], path=v["out"])
    return Path(v["out"]), [v["out"]]


COMMANDS = {"simulate": cmd_simulate, "estimate": cmd_estimate, "benchmark": cmd_benchmark,
            "infer": cmd_infer, "coplot": cmd_coplot}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigurationError("--threads must be positive")
            set_threads(args.threads)
        values = _resolve(parser, args)
        target, outputs = COMMANDS[args.command](values)
        write_manifest(target, args.command, values, outputs)
    except IteForestError as exc:
        print(f"error: {exc.code}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
