"""Experiment runner CLI.

Subcommands:
  run <plan.ini>       execute every (run, seed) in a plan, write artifacts
  diagnose <dump.csv>  tokenizer-agnostic diagnostics from a codebook dump
  oracle <config.ini>  print brute-force baselines for a data configuration

A plan is a sectioned key/value file: one [plan] section (seeds, out_dir,
comparisons) and one [run:<name>] section per experiment whose keys mirror
the training hyperparameters one-to-one.
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .artifacts import atomic_write_text, csv_text, write_csv
from .diagnostics import (DiagnosticsReport, build_report, entropy_bound_check,
                          frechet_gaussian_distance, mode_coverage, pairwise_recon_distance)
from .nn import TrainingFault
from .oracle import lloyd_max_1d, monte_carlo_distortion
from .quantizer import Codebook, assign, load_codebook_csv, mean_pairwise_distance, perplexity, save_codebook_csv
from .synth import GaussianMixtureSpec, LabeledDataset, assign_to_component, default_means, generate, save_dataset_csv
from .trainer import (TRAINLOG_HEADER, CODEBOOK_UPDATES, REGIMES, TrainConfig,
                      load_run_checkpoint, reconstruct, train_ae, train_baseline_vq, train_deferred_vq)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_TRAINING = 2

WORKERS_ENV = "SHRINKLAB_WORKERS"

_DATA_KEYS = {
    "num_components": 10,
    "points_per_component": 1000,
    "data_dim": 2,
    "separation": 5.0,
    "std": 1.0,
}
_TRAIN_KEYS = {
    "regime": None,  # required
    "epochs": None,  # required
    "latent_dim": None,  # defaults to data_dim
    "batch_size": 256,
    "lr": 1e-3,
    "beta": 0.25,
    "decay": 0.9,
    "codebook_size": 128,
    "hidden_dim": 32,
    "codebook_update": "ema",
    "weight_decay": 0.01,
    "embed_ratio": 10.0,
    "pretrain": None,
}
_INT_KEYS = {"num_components", "points_per_component", "data_dim", "latent_dim",
             "epochs", "batch_size", "codebook_size", "hidden_dim"}
_FLOAT_KEYS = {"separation", "std", "lr", "beta", "decay", "weight_decay", "embed_ratio"}


class PlanError(ValueError):
    """Plan/config validation problem; the message names the offending key."""


@dataclass
class RunSpec:
    name: str
    values: dict

    @property
    def regime(self) -> str:
        return self.values["regime"]

    @property
    def pretrain(self) -> str | None:
        return self.values.get("pretrain")


@dataclass
class ExperimentPlan:
    runs: list[RunSpec]
    seeds: list[int]
    out_dir: str
    comparisons: list[tuple[str, str]] = field(default_factory=list)

    def validate(self) -> None:
        if not self.runs:
            raise PlanError("plan contains no [run:<name>] sections")
        if not self.seeds:
            raise PlanError("key 'seeds' lists no seeds")
        names = [r.name for r in self.runs]
        if len(set(names)) != len(names):
            raise PlanError("duplicate run names in plan")
        for run in self.runs:
            if run.regime == "deferred_vq" and not run.pretrain:
                raise PlanError(f"key 'pretrain' missing in [run:{run.name}] (required for deferred_vq)")
            if run.pretrain is not None:
                if run.pretrain not in names:
                    raise PlanError(f"key 'pretrain' in [run:{run.name}] references unknown run {run.pretrain!r}")
                if names.index(run.pretrain) >= names.index(run.name):
                    raise PlanError(f"key 'pretrain' in [run:{run.name}] must reference an earlier run")
        for a, b in self.comparisons:
            for ref in (a, b):
                if ref not in names:
                    raise PlanError(f"key 'comparisons' references unknown run {ref!r}")


def _parse_value(key: str, raw: str):
    try:
        if key in _INT_KEYS:
            return int(raw)
        if key in _FLOAT_KEYS:
            return float(raw)
    except ValueError as exc:
        raise PlanError(f"key {key!r}: {exc}") from exc
    return raw


def _parse_run_section(name: str, section) -> RunSpec:
    values = {**_DATA_KEYS, **{k: v for k, v in _TRAIN_KEYS.items() if v is not None}}
    known = set(_DATA_KEYS) | set(_TRAIN_KEYS)
    for key, raw in section.items():
        if key not in known:
            raise PlanError(f"unknown key {key!r} in [run:{name}]")
        values[key] = _parse_value(key, raw)
    for required in ("regime", "epochs"):
        if required not in values:
            raise PlanError(f"key {required!r} missing in [run:{name}]")
    if values["regime"] not in REGIMES:
        raise PlanError(f"key 'regime' in [run:{name}] must be one of {REGIMES}")
    if values["codebook_update"] not in CODEBOOK_UPDATES:
        raise PlanError(f"key 'codebook_update' in [run:{name}] must be one of {CODEBOOK_UPDATES}")
    values.setdefault("latent_dim", values["data_dim"])
    return RunSpec(name=name, values=values)


def _resolve_plan_path(path: str) -> str:
    if os.path.exists(path):
        return path
    name = path if path.endswith(".ini") else path + ".ini"
    if os.sep not in path:
        bundled = resources.files("shrinklab").joinpath("plans", name)
        if bundled.is_file():
            return str(bundled)
    raise PlanError(f"plan file not found: {path}")


def load_plan(path: str, seed_list: str | None = None, out_dir: str | None = None) -> ExperimentPlan:
    parser = configparser.ConfigParser(interpolation=None)
    read = parser.read(_resolve_plan_path(path))
    if not read:
        raise PlanError(f"plan file not found: {path}")
    if "plan" not in parser:
        raise PlanError("missing [plan] section")
    plan_section = dict(parser["plan"])
    for key in plan_section:
        if key not in {"seeds", "out_dir", "comparisons"}:
            raise PlanError(f"unknown key {key!r} in [plan]")
    seeds_raw = seed_list if seed_list is not None else plan_section.get("seeds", "0")
    try:
        seeds = [int(s) for s in seeds_raw.replace(",", " ").split()]
    except ValueError as exc:
        raise PlanError(f"key 'seeds': {exc}") from exc
    comparisons = []
    for pair in plan_section.get("comparisons", "").split():
        if ":" not in pair:
            raise PlanError(f"key 'comparisons': expected 'a:b', got {pair!r}")
        a, b = pair.split(":", 1)
        comparisons.append((a, b))
    runs = []
    for section in parser.sections():
        if section == "plan":
            continue
        if not section.startswith("run:"):
            raise PlanError(f"unexpected section [{section}]; run sections are [run:<name>]")
        runs.append(_parse_run_section(section[len("run:"):], parser[section]))
    plan = ExperimentPlan(
        runs=runs,
        seeds=seeds,
        out_dir=out_dir if out_dir is not None else plan_section.get("out_dir", "artifacts"),
        comparisons=comparisons,
    )
    plan.validate()
    return plan


def _mixture_spec(values: dict, seed: int) -> GaussianMixtureSpec:
    return GaussianMixtureSpec(
        num_components=values["num_components"],
        points_per_component=values["points_per_component"],
        dim=values["data_dim"],
        means=default_means(values["num_components"], values["data_dim"], values["separation"]),
        std=values["std"],
        seed=seed,
    )


def _train_config(run: RunSpec, seed: int, run_dir: str, out_dir: str) -> TrainConfig:
    values = run.values
    pretrained = None
    if run.pretrain:
        pretrained = os.path.join(out_dir, run.pretrain, f"seed{seed}", "checkpoint.bin")
    return TrainConfig(
        regime=values["regime"],
        epochs=values["epochs"],
        latent_dim=values["latent_dim"],
        batch_size=values["batch_size"],
        lr=values["lr"],
        beta=values["beta"],
        decay=values["decay"],
        codebook_size=values["codebook_size"],
        hidden_dim=values["hidden_dim"],
        codebook_update=values["codebook_update"],
        weight_decay=values["weight_decay"],
        embed_ratio=values["embed_ratio"],
        seed=seed,
        checkpoint_path=os.path.join(run_dir, "checkpoint.bin"),
        pretrained_checkpoint=pretrained,
    )


def _ae_report(dataset: LabeledDataset, spec: GaussianMixtureSpec, recons: np.ndarray) -> DiagnosticsReport:
    """Partial report for continuous (no-codebook) runs."""
    means = dataset.standardize(spec.means)
    warn: list = []
    return DiagnosticsReport(
        distortion=float(((recons - dataset.points) ** 2).sum(axis=1).mean()),
        frechet_distance=frechet_gaussian_distance(dataset.points, recons, _warn=warn),
        mode_coverage=mode_coverage(recons, spec, means=means),
        pairwise_recon_distance=pairwise_recon_distance(recons),
        covariance_warning=bool(warn),
    )


def _write_embeddings_csv(path: str, z: np.ndarray, labels: np.ndarray) -> None:
    header = [f"z{i}" for i in range(z.shape[1])] + ["label"]
    rows = ([*row, int(label)] for row, label in zip(z, labels))
    atomic_write_text(path, csv_text(header, rows, exact=True))


def _write_recons_csv(path: str, recons: np.ndarray, labels: np.ndarray) -> None:
    header = [f"x{i}" for i in range(recons.shape[1])] + ["label"]
    rows = ([*row, int(label)] for row, label in zip(recons, labels))
    atomic_write_text(path, csv_text(header, rows, exact=True))


def execute_run(run: RunSpec, seed: int, out_dir: str) -> tuple[str, int, list[tuple[str, float]]]:
    """Train one (run, seed), write its artifact directory, return scalar metrics."""
    run_dir = os.path.join(out_dir, run.name, f"seed{seed}")
    os.makedirs(run_dir, exist_ok=True)
    spec = _mixture_spec(run.values, seed)
    dataset = generate(spec)
    config = _train_config(run, seed, run_dir, out_dir)

    codebook = None
    if config.regime == "ae_pretrain":
        params, log = train_ae(config, dataset)
        recons = params.decoder.forward(params.encoder.forward(dataset.points, cache=False), cache=False)
        report = _ae_report(dataset, spec, recons)
    elif config.regime == "baseline_vq":
        params, codebook, log = train_baseline_vq(config, dataset)
    else:
        params, codebook, log = train_deferred_vq(config, dataset, config.pretrained_checkpoint)

    z = params.encoder.forward(dataset.points, cache=False)
    if codebook is not None:
        recons = reconstruct(params, codebook, dataset.points)
        report = build_report(dataset, spec, codebook, params=params)
        save_codebook_csv(os.path.join(run_dir, "codebook.csv"), codebook)

    save_dataset_csv(os.path.join(run_dir, "dataset.csv"), dataset)
    write_csv(os.path.join(run_dir, "trainlog.csv"), TRAINLOG_HEADER, log.rows())
    _write_embeddings_csv(os.path.join(run_dir, "embeddings.csv"), z, dataset.labels)
    recon_labels = assign_to_component(recons, spec, means=dataset.standardize(spec.means))
    _write_recons_csv(os.path.join(run_dir, "reconstructions.csv"), recons, recon_labels)
    report.save(os.path.join(run_dir, "diagnostics.json"))
    return run.name, seed, report.scalar_items()


def _recompute_report_bytes(run: RunSpec, seed: int, out_dir: str) -> bytes:
    """Diagnostics recomputed from the stored checkpoint (for --check)."""
    run_dir = os.path.join(out_dir, run.name, f"seed{seed}")
    spec = _mixture_spec(run.values, seed)
    dataset = generate(spec)
    params, codebook = load_run_checkpoint(os.path.join(run_dir, "checkpoint.bin"))
    if codebook is None:
        recons = params.decoder.forward(params.encoder.forward(dataset.points, cache=False), cache=False)
        report = _ae_report(dataset, spec, recons)
    else:
        report = build_report(dataset, spec, codebook, params=params)
    return report.to_json().encode("utf-8")


def _summary_rows(results: dict[tuple[str, int], list[tuple[str, float]]], plan: ExperimentPlan) -> list[list]:
    rows: list[list] = []
    for run in plan.runs:
        per_metric: dict[str, list[float]] = {}
        for seed in plan.seeds:
            for metric, value in results[(run.name, seed)]:
                rows.append([run.name, seed, metric, value])
                per_metric.setdefault(metric, []).append(value)
        for metric, values in per_metric.items():
            rows.append([run.name, "mean", metric, float(np.mean(values))])
            rows.append([run.name, "min", metric, float(np.min(values))])
            rows.append([run.name, "max", metric, float(np.max(values))])
    return rows


def _print_comparisons(plan: ExperimentPlan, results) -> None:
    for a, b in plan.comparisons:
        means = {}
        for name in (a, b):
            metrics: dict[str, list[float]] = {}
            for seed in plan.seeds:
                for metric, value in results[(name, seed)]:
                    metrics.setdefault(metric, []).append(value)
            means[name] = {m: float(np.mean(v)) for m, v in metrics.items()}
        shared = sorted(set(means[a]) & set(means[b]))
        print(f"comparison {a} vs {b} (seed means):")
        for metric in shared:
            print(f"  {metric}: {means[a][metric]:.9g} -> {means[b][metric]:.9g}")


def _execute_run_task(args) -> tuple[str, int, list[tuple[str, float]]]:
    run, seed, out_dir = args
    return execute_run(run, seed, out_dir)


def cmd_run(plan_path: str, seed_list: str | None, out_dir: str | None, check: bool) -> int:
    plan = load_plan(plan_path, seed_list=seed_list, out_dir=out_dir)
    if check:
        return _cmd_check(plan)
    workers = max(1, int(os.environ.get(WORKERS_ENV, "1")))
    results: dict[tuple[str, int], list[tuple[str, float]]] = {}
    # deferred runs depend on their pretraining run's checkpoint: run the
    # independent level first, then the dependent level
    levels = [[r for r in plan.runs if not r.pretrain], [r for r in plan.runs if r.pretrain]]
    try:
        for level in levels:
            tasks = [(run, seed, plan.out_dir) for run in level for seed in plan.seeds]
            if not tasks:
                continue
            if workers > 1:
                with ProcessPoolExecutor(max_workers=workers) as pool:
                    for name, seed, metrics in pool.map(_execute_run_task, tasks):
                        results[(name, seed)] = metrics
            else:
                for task in tasks:
                    name, seed, metrics = _execute_run_task(task)
                    results[(name, seed)] = metrics
                    print(f"run {name} seed {seed}: done")
    except TrainingFault as fault:
        print(f"training fault: {fault}", file=sys.stderr)
        return EXIT_TRAINING

    write_csv(os.path.join(plan.out_dir, "summary.csv"), ["run", "seed", "metric", "value"],
              _summary_rows(results, plan))
    _print_comparisons(plan, results)
    finite = all(np.isfinite(v) for metrics in results.values() for _, v in metrics)
    print(f"plan complete: {len(results)} runs, artifacts in {plan.out_dir}")
    return EXIT_OK if finite else EXIT_TRAINING


def _cmd_check(plan: ExperimentPlan) -> int:
    mismatches = 0
    for run in plan.runs:
        for seed in plan.seeds:
            path = os.path.join(plan.out_dir, run.name, f"seed{seed}", "diagnostics.json")
            with open(path, "rb") as fh:
                stored = fh.read()
            fresh = _recompute_report_bytes(run, seed, plan.out_dir)
            status = "byte-identical" if fresh == stored else "MISMATCH"
            if fresh != stored:
                mismatches += 1
            print(f"check {run.name} seed {seed}: {status}")
    return EXIT_OK if mismatches == 0 else EXIT_CONFIG


def load_embeddings_csv(path: str) -> np.ndarray:
    """Embedding dump: numeric columns, optional trailing `label` column."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [line.rstrip("\n") for line in fh if line.strip()]
    if not lines:
        raise ValueError(f"{path}: line 1: empty embeddings dump")
    header = lines[0].split(",")
    cols = [i for i, name in enumerate(header) if name != "label"]
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != len(header):
            raise ValueError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(cells)}")
        try:
            rows.append([float(cells[i]) for i in cols])
        except ValueError as exc:
            raise ValueError(f"{path}: line {lineno}: {exc}") from exc
    return np.asarray(rows, dtype=float)


def diagnose(codebook_dump: str, embeddings_dump: str | None = None,
             spec_config: str | None = None) -> DiagnosticsReport:
    """Diagnostics from external dumps: computes what the inputs allow.

    The codebook dump must use the `token_id,usage_count,c0,...` format (the
    usage column may be omitted). An embeddings dump enables distortion,
    Frechet distance against the quantized set, coverage and pairwise
    distance; a data config (same keys as a plan run section) enables the
    component-mass metrics, with tokens assigned directly to the means.
    """
    tokens, usage = load_codebook_csv(codebook_dump)
    codebook = Codebook.from_tokens(tokens)
    if usage is not None:
        codebook.usage_counts = usage
    report = DiagnosticsReport()
    if tokens.shape[0] >= 2:
        report.mean_pairwise_distance = mean_pairwise_distance(tokens)
    if usage is not None and usage.sum() > 0:
        report.perplexity = perplexity(usage)

    spec = None
    if spec_config is not None:
        parser = configparser.ConfigParser(interpolation=None)
        if not parser.read(spec_config):
            raise PlanError(f"config file not found: {spec_config}")
        section_name = next((s for s in parser.sections() if s == "data" or s.startswith("run:")), None)
        if section_name is None:
            raise PlanError("spec config needs a [data] or [run:<name>] section")
        values = dict(_DATA_KEYS)
        for key, raw in parser[section_name].items():
            if key in _DATA_KEYS:
                values[key] = _parse_value(key, raw)
            elif section_name == "data":
                raise PlanError(f"unknown key {key!r} in [data]")
        spec = _mixture_spec(values, seed=0)
        if spec.dim != tokens.shape[1]:
            raise PlanError(f"key 'data_dim' ({spec.dim}) does not match token dim ({tokens.shape[1]})")
        from .diagnostics import mode_masses, usage_weighted_masses

        p, active = mode_masses(codebook, spec)
        h, m, _ = entropy_bound_check(p)
        report.mode_masses = [float(v) for v in p]
        report.mode_entropy = h
        report.active_modes = m
        report.entropy_bound = float(np.log(m))
        if usage is not None and usage.sum() > 0:
            report.usage_weighted_masses = [float(v) for v in usage_weighted_masses(codebook, spec)]

    if embeddings_dump is not None:
        z = load_embeddings_csv(embeddings_dump)
        if z.shape[1] != tokens.shape[1]:
            raise ValueError(f"embedding dim {z.shape[1]} does not match token dim {tokens.shape[1]}")
        quantized = tokens[assign(z, codebook)]
        report.distortion = float(((quantized - z) ** 2).sum(axis=1).mean())
        if z.shape[0] >= z.shape[1] + 1:
            warn: list = []
            report.frechet_distance = frechet_gaussian_distance(z, quantized, _warn=warn)
            report.covariance_warning = bool(warn)
        report.pairwise_recon_distance = pairwise_recon_distance(quantized)
        if spec is not None:
            report.mode_coverage = mode_coverage(quantized, spec)
    return report


def cmd_oracle(config_path: str, seed: int) -> int:
    parser = configparser.ConfigParser(interpolation=None)
    if not parser.read(config_path):
        raise PlanError(f"config file not found: {config_path}")
    section = next((s for s in parser.sections() if s == "data" or s.startswith("run:")), None)
    if section is None:
        raise PlanError("oracle config needs a [data] or [run:<name>] section")
    values = dict(_DATA_KEYS)
    codebook_size = _TRAIN_KEYS["codebook_size"]
    for key, raw in parser[section].items():
        if key in _DATA_KEYS:
            values[key] = _parse_value(key, raw)
        elif key == "codebook_size":
            codebook_size = _parse_value(key, raw)
    spec = _mixture_spec(values, seed=seed)
    print(f"oracle baselines (K={spec.num_components}, dim={spec.dim}, std={spec.std:.9g}, seed={seed})")
    ideal = monte_carlo_distortion(spec, spec.means, n_samples=100_000, seed=seed)
    print(f"  ideal-token distortion (tokens = component means, 100000 samples): {ideal:.9g}")
    if spec.dim == 1:
        dataset = generate(spec)
        fit = lloyd_max_1d(dataset.points[:, 0], min(codebook_size, spec.size // 2))
        print(f"  lloyd-max on standardized samples (S={fit.levels.size}): distortion {fit.distortion:.9g}")
    return EXIT_OK


def build_arg_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shrinklab", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute an experiment plan")
    p_run.add_argument("plan", help="plan file path or bundled plan name (e.g. reproduce_fig2)")
    p_run.add_argument("--seed-list", default=None, help="override plan seeds, e.g. '0,1,2'")
    p_run.add_argument("--out-dir", default=None, help="override the plan output directory")
    p_run.add_argument("--check", action="store_true",
                       help="recompute diagnostics from stored checkpoints and verify byte-equality")

    p_diag = sub.add_parser("diagnose", help="diagnose a codebook dump")
    p_diag.add_argument("codebook", help="codebook CSV dump (token_id,usage_count,c0,...)")
    p_diag.add_argument("--embeddings", default=None, help="optional embeddings CSV dump")
    p_diag.add_argument("--spec", default=None, help="optional data config for component-mass metrics")
    p_diag.add_argument("-o", "--out", default=None, help="write the report JSON here as well")

    p_oracle = sub.add_parser("oracle", help="print oracle baselines for a data config")
    p_oracle.add_argument("config", help="config file with a [data] or [run:<name>] section")
    p_oracle.add_argument("--seed", type=int, default=0)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_arg_parser().parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args.plan, args.seed_list, args.out_dir, args.check)
        if args.command == "diagnose":
            report = diagnose(args.codebook, args.embeddings, args.spec)
            text = report.to_json()
            if args.out:
                atomic_write_text(args.out, text)
            print(text, end="")
            return EXIT_OK
        if args.command == "oracle":
            return cmd_oracle(args.config, args.seed)
    except (PlanError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingFault as fault:
        print(f"training fault: {fault}", file=sys.stderr)
        return EXIT_TRAINING
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
