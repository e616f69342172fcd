"""Command-line entry point: ``dplcm <command> [options]``.

Commands: protect, fit, synthesize, summarize, evaluate, bench, nested-fit.
Each command reads an optional YAML config (``--config``); command-line
flags override config values. Exit status is 0 on success, 2 for
configuration errors, 3 for data errors and 4 for numerical failures.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import platform
import sys
import time
from pathlib import Path
from typing import Any

import numpy as np
import scipy
import yaml

from . import __version__
from .harness import (
    ExperimentPlan,
    coverage_experiment,
    derived_seed,
    eps_label,
    fit_counts,
    log_ratio_metric,
    runtime_benchmark,
    simulate_population,
    write_log_ratio_csv,
)
from .inference import (
    SyntheticRelease,
    combine_marginals,
    combined_to_dict,
    credible_intervals,
    summaries_to_dict,
    summarize_draws,
    synthesize,
    write_synthetic,
)
from .mechanism import NoisyRelease, PrivacyBudget, geometric_mechanism, read_release, write_release
from .model import PriorSpec, marginal_prob_batch, params_to_row, read_params_csv, write_params_csv
from .nested import (
    NestedChainConfig,
    protect_summaries,
    read_summaries,
    run_nested_chain,
    write_summaries,
)
from .sampler import (
    NumericalError,
    PosteriorDraws,
    Problem,
    SamplerConfig,
    run_chain,
    tuning_warnings,
    write_acceptance_json,
    write_latent_counts_csv,
    write_trace_csv,
)
from .streams import stream
from .tables import (
    RecordTable,
    Schema,
    SchemaError,
    all_two_way_queries,
    marginal_counts,
    read_records_csv,
    write_records_csv,
)

MANIFEST_FORMAT_VERSION = 1
OUTPUT_ENV = "DPLCM_OUTPUT_DIR"

PRESETS = {
    "acs": {"k": 10, "iterations": 5000, "burn_in": 2000},
    "nltcs": {"k": 7, "iterations": 12000, "burn_in": 2000},
}

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4


class ConfigError(ValueError):
    """Missing or inconsistent configuration."""


# -- config handling ------------------------------------------------------------


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})") from None
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def _section(cfg: dict, name: str) -> dict:
    sec = cfg.get(name) or {}
    if not isinstance(sec, dict):
        raise ConfigError(f"config section {name!r} must be a mapping")
    return dict(sec)


def _pick(args, cfg: dict, attr: str, key: str | None = None, required: bool = False, default=None):
    value = getattr(args, attr, None)
    if value is None:
        value = cfg.get(key or attr)
    if value is None:
        value = default
    if value is None and required:
        raise ConfigError(f"missing required setting {key or attr!r}")
    return value


def config_hash(effective: dict) -> str:
    canon = json.dumps(effective, sort_keys=True, default=str)
    return hashlib.sha256(canon.encode()).hexdigest()


def write_manifest(out_dir: Path, command: str, effective: dict, outputs: list[str], seed: int | None,
                   name: str = "manifest.json") -> Path:
    manifest = {
        "format_version": MANIFEST_FORMAT_VERSION,
        "command": command,
        "package_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "seed": seed,
        "config_hash": config_hash(effective),
        "config": effective,
        "outputs": outputs,
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    path = out_dir / name
    path.write_text(json.dumps(manifest, indent=2, default=str) + "\n")
    return path


def _out_dir(args, cfg: dict) -> Path:
    out = _pick(args, cfg, "out", "output_dir") or os.environ.get(OUTPUT_ENV)
    if out is None:
        raise ConfigError("no output directory: pass --out, set output_dir, or set " + OUTPUT_ENV)
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def load_schema(args, cfg: dict) -> tuple[Schema, list | None]:
    """Schema plus the marginal selection (``None`` means all two-way)."""
    path = getattr(args, "schema", None) or cfg.get("schema_path")
    if path is not None:
        try:
            data = yaml.safe_load(Path(path).read_text())
        except OSError as exc:
            raise SchemaError(f"cannot read schema {path}: {exc}") from None
    else:
        data = cfg.get("schema")
        if data is None:
            raise ConfigError("no schema: pass --schema or define 'schema' in the config")
        if isinstance(data, list):
            data = {"variables": data}
    schema = Schema.from_dict(data)
    marg = data.get("marginals", cfg.get("marginals"))
    return schema, _parse_marginals(marg)


def _parse_marginals(marg) -> list | None:
    if marg is None:
        return None
    if isinstance(marg, dict):
        if marg.get("all_two_way"):
            return None
        subsets = marg.get("subsets")
    else:
        subsets = marg
    if not subsets:
        raise ConfigError("marginal selection must set all_two_way: true or list subsets")
    return [list(s) for s in subsets]


def _queries(schema: Schema, subsets: list | None):
    if subsets is None:
        return all_two_way_queries(schema)
    queries = [schema.query(s) for s in subsets]
    if len({q.variables for q in queries}) != len(queries):
        raise ConfigError("duplicate marginal in selection")
    return queries


def sampler_config(args, cfg: dict) -> SamplerConfig:
    sec = _section(cfg, "sampler")
    preset = getattr(args, "preset", None) or sec.pop("preset", None)
    values: dict[str, Any] = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        values.update(PRESETS[preset])
    prior = sec.pop("prior", None)
    values.update(sec)
    for attr, key in (("k", "k"), ("iterations", "iterations"), ("burn_in", "burn_in"), ("thin", "thin"),
                      ("strategy", "pi_strategy")):
        v = getattr(args, attr, None)
        if v is not None:
            values[key] = v
    seed = _pick(args, cfg, "seed")
    if seed is None:
        raise ConfigError("a seed is required (--seed or 'seed' in the config)")
    values["seed"] = int(seed)
    if prior is not None:
        values["prior"] = PriorSpec(**prior)
    try:
        return SamplerConfig(**values)
    except TypeError as exc:
        raise ConfigError(f"bad sampler setting: {exc}") from None
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


# -- fit archive ------------------------------------------------------------------


def save_fit(out_dir: Path, draws: PosteriorDraws, problem: Problem) -> list[str]:
    outputs = ["draws.csv", "trace.csv", "acceptance.json", "fit.json"]
    rows = np.array([params_to_row(p) for p in draws.all_params()])
    write_params_csv(out_dir / "draws.csv", draws.schema, draws.iterations, rows)
    write_trace_csv(out_dir / "trace.csv", draws)
    write_acceptance_json(out_dir / "acceptance.json", draws)
    if draws.M is not None:
        write_latent_counts_csv(out_dir / "latent_counts.csv", draws)
        outputs.append("latent_counts.csv")
    fit = {
        "format_version": MANIFEST_FORMAT_VERSION,
        "kind": "lcm-fit",
        "schema": draws.schema.to_dict(),
        "queries": [[draws.schema.names[v] for v in q.variables] for q in draws.queries],
        "n": draws.n,
        "no_noise": problem.no_noise,
        "sampler": draws.config.to_dict(),
    }
    (out_dir / "fit.json").write_text(json.dumps(fit, indent=2, default=str) + "\n")
    return outputs


def load_fit(fit_dir: str | Path) -> PosteriorDraws:
    """Rebuild posterior draws (without the per-iteration trace) from a fit directory."""
    fit_dir = Path(fit_dir)
    try:
        meta = json.loads((fit_dir / "fit.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaError(f"{fit_dir}: not a fit directory ({exc})") from None
    if meta.get("format_version") != MANIFEST_FORMAT_VERSION or meta.get("kind") != "lcm-fit":
        raise SchemaError(f"{fit_dir}: unsupported fit archive")
    schema = Schema.from_dict(meta["schema"])
    queries = [schema.query(q) for q in meta["queries"]]
    iterations, params = read_params_csv(fit_dir / "draws.csv", schema)
    pi = np.array([p.pi for p in params])
    psi = [np.array([p.psi[j] for p in params]) for j in range(schema.p)]
    marg = np.concatenate([marginal_prob_batch(pi, psi, q) for q in queries], axis=1)
    sampler = {k: v for k, v in meta["sampler"].items() if k != "prior"}
    return PosteriorDraws(
        schema=schema, queries=queries, n=int(meta["n"]), iterations=np.asarray(iterations),
        pi=pi, psi=psi, eta=None, M=None, marginal_probs=marg, trace=np.empty((0, marg.shape[1])),
        acceptance=json.loads((fit_dir / "acceptance.json").read_text())["acceptance"],
        config=SamplerConfig(**sampler),
    )


# -- commands -----------------------------------------------------------------------


def cmd_protect(args, cfg: dict) -> int:
    out = _out_dir(args, cfg)
    budget_cfg = _section(cfg, "budget")
    eps = _pick(args, budget_cfg, "epsilon")
    if eps is None:
        raise ConfigError("missing required setting 'epsilon'")
    sensitivity = _pick(args, budget_cfg, "sensitivity")
    seed = _pick(args, cfg, "seed", required=True)
    effective = {"epsilon": float(eps), "seed": int(seed)}

    nested_path = getattr(args, "nested_counts", None)
    if nested_path is not None:
        exact = read_summaries(nested_path)
        if exact.noisy:
            raise SchemaError(f"{nested_path}: counts are already noised")
        sens = 1.0 if sensitivity is None else float(sensitivity)
        noisy = protect_summaries(exact.counts, exact.N, float(eps), int(seed), sens)
        write_summaries(out / "nested_release.json", noisy)
        effective.update(sensitivity=sens, nested_counts=str(nested_path))
        write_manifest(out, "protect", effective, ["nested_release.json"], int(seed))
        return EXIT_OK

    schema, subsets = load_schema(args, cfg)
    data_path = _pick(args, cfg, "data", required=True)
    table = read_records_csv(data_path, schema)
    queries = _queries(schema, subsets)
    sens = 2 if sensitivity is None else int(sensitivity)
    budget = PrivacyBudget(float(eps), len(queries), sens, budget_cfg.get("weights"))
    counts = [marginal_counts(table, q) for q in queries]
    noisy = geometric_mechanism(counts, budget, int(seed))
    release = NoisyRelease(schema, table.n, budget, tuple(noisy))
    write_release(out / "release.json", release)
    effective.update(sensitivity=sens, data=str(data_path), schema=schema.to_dict(),
                     marginals=[[schema.names[v] for v in q.variables] for q in queries])
    write_manifest(out, "protect", effective, ["release.json"], int(seed))
    return EXIT_OK


def cmd_fit(args, cfg: dict) -> int:
    out = _out_dir(args, cfg)
    config = sampler_config(args, cfg)
    release_path = _pick(args, cfg, "release")
    no_noise = bool(getattr(args, "no_noise", False) or cfg.get("no_noise", False))
    if release_path is not None and not no_noise:
        release = read_release(release_path)
        problem = Problem.from_release(release)
        source = {"release": str(release_path)}
    elif no_noise:
        schema, subsets = load_schema(args, cfg)
        data_path = _pick(args, cfg, "data", required=True)
        table = read_records_csv(data_path, schema)
        queries = _queries(schema, subsets)
        problem = Problem.from_counts(schema, [marginal_counts(table, q) for q in queries])
        source = {"data": str(data_path), "no_noise": True}
    else:
        raise ConfigError("fit needs --release, or --no-noise with --data and a schema")
    draws = run_chain(config, problem)
    outputs = save_fit(out, draws, problem)
    for warning in tuning_warnings(draws.acceptance):
        print(f"warning: {warning}", file=sys.stderr)
    write_manifest(out, "fit", {**source, "sampler": config.to_dict()}, outputs, config.seed)
    return EXIT_OK


def cmd_synthesize(args, cfg: dict) -> int:
    out = _out_dir(args, cfg)
    sec = _section(cfg, "synthesize")
    fit_dir = _pick(args, cfg, "fit_dir", required=True)
    seed = int(_pick(args, cfg, "seed", required=True))
    m = int(_pick(args, sec, "m", default=20))
    n_syn = _pick(args, sec, "n_syn")
    draws = load_fit(fit_dir)
    release = synthesize(draws, m=m, n_syn=n_syn, seed=seed)
    paths = write_synthetic(out, release)
    effective = {"fit_dir": str(fit_dir), "m": m, "n_syn": release.n_syn, "seed": seed}
    write_manifest(out, "synthesize", effective, [p.name for p in paths] + ["synthetic_manifest.json"], seed)
    return EXIT_OK


def cmd_summarize(args, cfg: dict) -> int:
    out = _out_dir(args, cfg)
    sec = _section(cfg, "summarize")
    fit_dir = _pick(args, cfg, "fit_dir", required=True)
    level = float(_pick(args, sec, "level", default=0.95))
    draws = load_fit(fit_dir)
    summaries = summarize_draws(draws, level)
    (out / "summary.json").write_text(json.dumps(summaries_to_dict(summaries, n_draws=len(draws)), indent=2) + "\n")
    outputs = ["summary.json"]
    syn_dir = _pick(args, sec, "synthetic_dir")
    if syn_dir is not None:
        syn_dir = Path(syn_dir)
        manifest = json.loads((syn_dir / "synthetic_manifest.json").read_text())
        tables = [read_records_csv(syn_dir / name, draws.schema) for name in manifest["files"]]
        release = SyntheticRelease(tables, np.asarray(manifest["draw_indices"]), manifest["seed"], manifest["n_syn"])
        combined = combine_marginals(release, draws.queries, level)
        labels = [s.target for s in summaries]
        (out / "synthetic_summary.json").write_text(
            json.dumps(combined_to_dict(combined, labels, m=release.m, level=level), indent=2) + "\n")
        outputs.append("synthetic_summary.json")
    write_manifest(out, "summarize", {"fit_dir": str(fit_dir), "level": level,
                                      "synthetic_dir": None if syn_dir is None else str(syn_dir)}, outputs, None)
    return EXIT_OK


def cmd_evaluate(args, cfg: dict) -> int:
    out = _out_dir(args, cfg)
    plan_path = getattr(args, "plan", None)
    plan_cfg = load_config(plan_path) if plan_path else _section(cfg, "evaluate")
    if not plan_cfg and plan_path is None:
        raise ConfigError("evaluate needs --plan or an 'evaluate' config section")
    plan_cfg = dict(plan_cfg)
    study = plan_cfg.pop("study", "coverage")
    if getattr(args, "replicates", None) is not None:
        plan_cfg["replicates"] = args.replicates
    if getattr(args, "seed", None) is not None:
        plan_cfg["seed"] = args.seed
    if "seed" not in plan_cfg:
        raise ConfigError("the plan needs a seed")
    try:
        plan = ExperimentPlan.from_dict(plan_cfg)
    except TypeError as exc:
        raise ConfigError(f"bad plan setting: {exc}") from None
    effective = {"study": study, **plan_cfg}
    if study == "coverage":
        report = coverage_experiment(plan)
        report.write_csv(out / "coverage.csv")
        outputs = ["coverage.csv"]
    elif study == "log-ratio":
        outputs = _log_ratio_study(plan, out)
    else:
        raise ConfigError(f"unknown study {study!r}; use 'coverage' or 'log-ratio'")
    write_manifest(out, "evaluate", effective, outputs, plan.seed)
    return EXIT_OK


def _log_ratio_study(plan: ExperimentPlan, out: Path) -> list[str]:
    params = plan.generating_params()
    population = simulate_population(params, plan.population_size, stream(plan.seed, "population"), plan.schema)
    rows = stream(plan.seed, "sample", 0).choice(population.n, size=plan.n, replace=False)
    sample = RecordTable(plan.schema, population.records[rows])
    counts = [marginal_counts(sample, q) for q in plan.queries]
    truth = np.concatenate([marginal_counts(population, q).counts / population.n for q in plan.queries])
    labels = [q.cell_label(c, plan.schema.p) for q in plan.queries for c in range(q.r)]
    outputs = []
    for i, eps in enumerate(plan.epsilons):
        draws = fit_counts(counts, plan.schema, plan.n, eps, plan.sampler,
                           derived_seed(plan.seed, "log-ratio", i), plan.sensitivity)
        est = draws.marginal_probs.mean(axis=0)
        result = log_ratio_metric(est, truth, truth * population.n)
        name = f"log_ratio_{eps_label(eps)}.csv"
        write_log_ratio_csv(out / name, labels, result, truth, est)
        outputs.append(name)
    return outputs


def cmd_bench(args, cfg: dict) -> int:
    out = _out_dir(args, cfg)
    sec = _section(cfg, "bench")
    dims = _pick(args, sec, "dims", default=list(range(4, 17)))
    ks = _pick(args, sec, "ks", default=[2, 10, 20])
    repeats = int(_pick(args, sec, "repeats", default=100))
    seed = int(_pick(args, cfg, "seed", default=0))
    table = runtime_benchmark(dims, ks, repeats, seed=seed)
    table.write_csv(out / "benchmark.csv")
    write_manifest(out, "bench", {"dims": list(dims), "ks": list(ks), "repeats": repeats}, ["benchmark.csv"], seed)
    return EXIT_OK


def cmd_nested_fit(args, cfg: dict) -> int:
    out = _out_dir(args, cfg)
    sec = _section(cfg, "nested")
    path = _pick(args, sec, "summaries") or getattr(args, "summaries", None)
    if path is None:
        raise ConfigError("nested-fit needs --summaries")
    summaries = read_summaries(path)
    values = {}
    for key in ("G", "M", "races", "relationships", "iterations", "burn_in", "thin", "concentration"):
        v = getattr(args, key.lower(), None)
        if v is None:
            v = sec.get(key)
        if v is not None:
            values[key] = v
    values["seed"] = int(_pick(args, cfg, "seed", required=True))
    try:
        config = NestedChainConfig(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    draws = run_nested_chain(config, summaries)
    header = "iteration," + ",".join(f"P(S{t})" for t in range(1, 6))
    np.savetxt(out / "nested_draws.csv", np.column_stack([draws.iterations, draws.probs]),
               delimiter=",", header=header, comments="", fmt=["%d"] + ["%.17g"] * 5)
    np.savetxt(out / "nested_trace.csv", np.column_stack([np.arange(1, len(draws.trace) + 1), draws.trace]),
               delimiter=",", header=header, comments="", fmt=["%d"] + ["%.17g"] * 5)
    ci = credible_intervals(draws.probs)
    summary = {
        "format_version": MANIFEST_FORMAT_VERSION,
        "kind": "nested-summary",
        "acceptance": draws.acceptance,
        "targets": [{"target": f"S{t + 1}", "mean": float(draws.probs[:, t].mean()),
                     "lo": float(ci[t, 0]), "hi": float(ci[t, 1]), "level": 0.95} for t in range(5)],
    }
    (out / "nested_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    write_manifest(out, "nested-fit", {"summaries": str(path), **config.to_dict()},
                   ["nested_draws.csv", "nested_trace.csv", "nested_summary.json"], config.seed)
    return EXIT_OK


COMMANDS = {
    "protect": cmd_protect,
    "fit": cmd_fit,
    "synthesize": cmd_synthesize,
    "summarize": cmd_summarize,
    "evaluate": cmd_evaluate,
    "bench": cmd_bench,
    "nested-fit": cmd_nested_fit,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dplcm", description="Latent class post-processing of differentially private marginal counts.")
    parser.add_argument("--version", action="version", version=f"dplcm {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML config file")
        p.add_argument("--out", help=f"output directory (default: ${OUTPUT_ENV})")
        p.add_argument("--seed", type=int, help="master seed")
        return p

    p = common(sub.add_parser("protect", help="noise marginal counts of microdata"))
    p.add_argument("--schema", help="schema file (YAML/JSON)")
    p.add_argument("--data", help="microdata CSV")
    p.add_argument("--epsilon", type=float, help="total privacy budget")
    p.add_argument("--sensitivity", type=float, help="per-count sensitivity (default 2; 1 for nested summaries)")
    p.add_argument("--nested-counts", dest="nested_counts", help="exact nested summary file to noise instead")

    p = common(sub.add_parser("fit", help="fit the latent class model"))
    p.add_argument("--release", help="noisy release file")
    p.add_argument("--no-noise", dest="no_noise", action="store_true", help="fit exact counts of --data")
    p.add_argument("--schema")
    p.add_argument("--data")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--k", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--burn-in", dest="burn_in", type=int)
    p.add_argument("--thin", type=int)
    p.add_argument("--strategy", choices=["dirichlet-proposal", "gamma-reparam"])

    p = common(sub.add_parser("synthesize", help="draw synthetic datasets from a fit"))
    p.add_argument("--fit-dir", dest="fit_dir")
    p.add_argument("--m", type=int)
    p.add_argument("--n-syn", dest="n_syn", type=int)

    p = common(sub.add_parser("summarize", help="posterior means and credible intervals"))
    p.add_argument("--fit-dir", dest="fit_dir")
    p.add_argument("--level", type=float)
    p.add_argument("--synthetic-dir", dest="synthetic_dir", help="also pool these synthetic datasets")

    p = common(sub.add_parser("evaluate", help="run a simulation study plan"))
    p.add_argument("--plan", help="plan file (YAML)")
    p.add_argument("--replicates", type=int)

    p = common(sub.add_parser("bench", help="marginal-probability timing table"))
    p.add_argument("--dims", type=int, nargs="+")
    p.add_argument("--ks", type=int, nargs="+")
    p.add_argument("--repeats", type=int)

    p = common(sub.add_parser("nested-fit", help="fit the nested household model to summary counts"))
    p.add_argument("--summaries", help="summary count file (JSON)")
    p.add_argument("--g", type=int, help="household classes")
    p.add_argument("--m", type=int, help="individual classes")
    p.add_argument("--races", type=int)
    p.add_argument("--relationships", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--burn_in", "--burn-in", dest="burn_in", type=int)
    p.add_argument("--thin", type=int)
    p.add_argument("--concentration", type=float)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SchemaError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
