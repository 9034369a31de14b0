"""Command-line entry point: subset selection runs, continual-learning
simulations, method ablations, and buffer snapshot inspection.

Every command takes a JSON config whose keys mirror the library dataclasses;
--seed overrides the config seed. Outputs are written to a temp file in the
target directory and renamed into place, so a failed run leaves no partial
metrics behind. Exit status is 0 only when every requested file was written.
The DUALMEM_LOG environment variable sets the log level.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import dataclasses
import json
import logging
import os
import sys
import tempfile
from dataclasses import fields

import numpy as np

from . import __version__
from .buffers import load_snapshot, save_snapshot
from .datasets import (
    FeatureDataset,
    MixtureComponent,
    MixtureSpec,
    StreamSpec,
    build_stream,
    generate_mixture,
    load_dataset,
    read_idx,
)
from .harness import HarnessConfig, SelectionSettings, run, write_metrics_csv, write_summary_json
from .kernels import KernelConfig, cs_divergence, renyi_entropy
from .pruning import diversity_table, write_diversity_csv
from .selection import SelectionConfig, optimize_weights, select_subset, write_trace_csv

log = logging.getLogger("dualmem.cli")


class ConfigError(ValueError):
    pass


def _load_config(path) -> dict:
    try:
        with open(path) as f:
            cfg = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {path}: {e}")
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    return cfg


def _build_dataclass(cls, payload: dict, context: str):
    allowed = {f.name for f in fields(cls)}
    unknown = set(payload) - allowed
    if unknown:
        raise ConfigError(f"{context}: unknown keys {sorted(unknown)}")
    try:
        return cls(**payload)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{context}: {e}")


def _dataset_from_config(section: dict, context: str) -> FeatureDataset:
    if not isinstance(section, dict):
        raise ConfigError(f"{context} must be an object")
    if "path" in section:
        try:
            return load_dataset(section["path"])
        except FileNotFoundError:
            raise ConfigError(f"{context}: dataset file not found: {section['path']}")
    if "idx_images" in section:
        try:
            return read_idx(section["idx_images"], section["idx_labels"])
        except (FileNotFoundError, KeyError) as e:
            raise ConfigError(f"{context}: {e}")
    if "mixture" in section:
        mix = section["mixture"]
        comps = tuple(
            MixtureComponent(
                mean=tuple(c["mean"]), std=c["std"], class_id=c["class_id"], count=c["count"]
            )
            for c in mix.get("components", [])
        )
        try:
            return generate_mixture(MixtureSpec(components=comps, seed=mix.get("seed", 0)))
        except (ValueError, KeyError) as e:
            raise ConfigError(f"{context}: bad mixture spec: {e}")
    raise ConfigError(f"{context}: give one of path / idx_images+idx_labels / mixture")


def _stream_from_config(config: dict) -> tuple:
    section = dict(config.get("stream", {}))
    data = _dataset_from_config(section.pop("data", {}), "stream.data")
    for key in ("labels_per_task", "train_counts"):
        if key in section and section[key] is not None:
            section[key] = tuple(
                tuple(v) if isinstance(v, list) else v for v in section[key]
            )
    spec = _build_dataclass(StreamSpec, section, "stream")
    return build_stream(data, spec), spec


def _harness_from_config(config: dict, seed_override: int | None) -> HarnessConfig:
    section = dict(config.get("harness", {}))
    if "selection" in section:
        section["selection"] = _build_dataclass(
            SelectionSettings, section["selection"], "harness.selection"
        )
    if seed_override is not None:
        section["seed"] = seed_override
    return _build_dataclass(HarnessConfig, section, "harness")


class _StagedOutputs:
    """Write files to a temp dir, then move all of them into place at commit."""

    def __init__(self, out_dir):
        self.out_dir = out_dir
        os.makedirs(out_dir, exist_ok=True)
        self._tmp = tempfile.mkdtemp(prefix=".staging-", dir=out_dir)
        self._names: list[str] = []

    def path(self, name: str) -> str:
        self._names.append(name)
        return os.path.join(self._tmp, name)

    def commit(self) -> None:
        for name in self._names:
            os.replace(os.path.join(self._tmp, name), os.path.join(self.out_dir, name))
        os.rmdir(self._tmp)

    def abort(self) -> None:
        for name in self._names:
            try:
                os.remove(os.path.join(self._tmp, name))
            except FileNotFoundError:
                pass
        try:
            os.rmdir(self._tmp)
        except OSError:
            pass


def cmd_select(config: dict, out_dir, seed_override: int | None) -> None:
    data = _dataset_from_config(config.get("dataset", {}), "dataset")
    sel_section = dict(config.get("selection", {}))
    if seed_override is not None:
        sel_section["seed"] = seed_override
    sel_cfg = _build_dataclass(SelectionConfig, sel_section, "selection")
    kcfg = _build_dataclass(KernelConfig, config.get("kernel", {}), "kernel")
    mode = config.get("mode", "global")
    if mode not in ("global", "balanced"):
        raise ConfigError(f"mode must be global or balanced, got {mode!r}")

    state = optimize_weights(data, sel_cfg, kcfg)
    result = select_subset(
        state, sel_cfg.sample_count, mode=mode, labels=data.labels,
        dataset=data, kernel_config=kcfg,
    )

    baseline_rng = np.random.default_rng(config.get("baseline_seed", 20))
    baseline = []
    for _ in range(20):
        idx = baseline_rng.choice(data.n, size=len(result.chosen_indices), replace=False)
        baseline.append(cs_divergence(data, data.subset(idx), kcfg))
    baseline = np.asarray(baseline)

    staged = _StagedOutputs(out_dir)
    try:
        with open(staged.path("chosen_indices.csv"), "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["index"])
            for i in result.chosen_indices:
                writer.writerow([int(i)])
        with open(staged.path("final_weights.csv"), "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["index", "weight"])
            for i, w in enumerate(result.final_weights):
                writer.writerow([i, repr(float(w))])
        write_trace_csv(state, staged.path("trace.csv"))
        diagnostics = {
            "subset_entropy": result.diagnostics["subset_entropy"],
            "divergence_to_full": result.diagnostics["divergence_to_full"],
            "full_entropy": renyi_entropy(data, kcfg),
            "random_baseline": {
                "n_subsets": 20,
                "mean": float(baseline.mean()),
                "q25": float(np.percentile(baseline, 25)),
                "q75": float(np.percentile(baseline, 75)),
            },
            "random_equivalent": sel_cfg.lambda_cs == 0.0,
            "sum_final_weights": float(np.sum(state.last_sampled_weights)),
            "mode": mode,
            "seed": sel_cfg.seed,
        }
        with open(staged.path("diagnostics.json"), "w") as f:
            json.dump(diagnostics, f, indent=2, sort_keys=True)
            f.write("\n")
    except BaseException:
        staged.abort()
        raise
    staged.commit()


def cmd_simulate(config: dict, out_dir, seed_override: int | None) -> None:
    stream, spec = _stream_from_config(config)
    harness_cfg = _harness_from_config(config, seed_override)
    staged = _StagedOutputs(out_dir)

    want_snapshots = bool(config.get("snapshots", False)) and harness_cfg.method != "sgd-none"

    def snapshot_hook(task_idx, net, mem):
        if want_snapshots and mem is not None:
            staged.path(f"snapshot_task{task_idx}.csv")
            staged.path(f"snapshot_task{task_idx}.bin")
            save_snapshot(mem, os.path.join(staged._tmp, f"snapshot_task{task_idx}"))

    try:
        metrics = run(stream, harness_cfg, on_task_end=snapshot_hook)
        write_metrics_csv(metrics, staged.path("metrics.csv"))
        echo = {"stream": {"source": spec.source, "n_tasks": spec.n_tasks, "seed": spec.seed},
                "harness": json.loads(json.dumps(_jsonable(harness_cfg)))}
        write_summary_json(metrics, staged.path("summary.json"), config_echo=echo)
    except BaseException:
        staged.abort()
        raise
    staged.commit()


def _jsonable(obj):
    if hasattr(obj, "__dataclass_fields__"):
        return {k: _jsonable(v) for k, v in vars(obj).items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def _one_ablation(args):
    stream_config, method, seed = args
    stream, _ = _stream_from_config(stream_config)
    cfg = dataclasses.replace(_harness_from_config(stream_config, seed), method=method)
    metrics = run(stream, cfg)
    return method, seed, metrics.average_accuracy


def cmd_ablate(config: dict, out_dir, seed_override: int | None, jobs: int) -> None:
    methods = config.get("methods", [])
    seeds = config.get("seeds", [])
    if len(methods) < 2:
        raise ConfigError("ablate needs at least two methods")
    if len(seeds) < 2:
        raise ConfigError("ablate needs at least two seeds")
    if seed_override is not None:
        log.warning("--seed is ignored by ablate; seeds come from the config list")
    work = [(config, m, int(s)) for m in methods for s in seeds]

    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_one_ablation, work))
    else:
        rows = [_one_ablation(w) for w in work]

    staged = _StagedOutputs(out_dir)
    try:
        with open(staged.path("comparison.csv"), "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["method", "seed", "average_accuracy"])
            for method, seed, acc in rows:
                writer.writerow([method, seed, repr(float(acc))])
        means = {
            m: float(np.mean([acc for method, _, acc in rows if method == m]))
            for m in dict.fromkeys(methods)
        }
        with open(staged.path("summary.json"), "w") as f:
            json.dump({"per_method_mean": means, "seeds": list(seeds)}, f, indent=2, sort_keys=True)
            f.write("\n")
    except BaseException:
        staged.abort()
        raise
    staged.commit()


def cmd_inspect(config: dict, out_dir, seed_override: int | None) -> None:
    stem = config.get("snapshot")
    if not stem:
        raise ConfigError("inspect needs a 'snapshot' path stem")
    try:
        mem = load_snapshot(stem)
    except FileNotFoundError as e:
        raise ConfigError(f"snapshot not found: {e}")

    staged = _StagedOutputs(out_dir)
    try:
        info = {
            "fast_count": len(mem.fast),
            "slow_count": len(mem.slow),
            "fast_capacity": mem.fast_capacity,
            "slow_capacity": mem.slow_capacity,
            "max_capacity": mem.max_capacity,
            "seen_count": mem.seen_count,
            "slow_class_counts": {str(k): v for k, v in sorted(mem.slow_class_counts().items())},
        }
        with open(staged.path("inspection.json"), "w") as f:
            json.dump(info, f, indent=2, sort_keys=True)
            f.write("\n")
        if mem.slow:
            quota = config.get("quota", len(mem.slow))
            write_diversity_csv(diversity_table(mem, quota), staged.path("diversity.csv"))
    except BaseException:
        staged.abort()
        raise
    staged.commit()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dualmem",
        description="Dual replay memory experiments: selection, simulation, ablation, inspection.",
    )
    parser.add_argument("--version", action="version", version=f"dualmem {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")

    p_select = sub.add_parser("select", help="optimize selection weights on one dataset")
    common(p_select)
    p_sim = sub.add_parser("simulate", help="run one continual-learning configuration")
    common(p_sim)
    p_ablate = sub.add_parser("ablate", help="cross-product of methods and seeds")
    common(p_ablate)
    p_ablate.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p_inspect = sub.add_parser("inspect", help="summarize a buffer snapshot")
    common(p_inspect)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("DUALMEM_LOG", "WARNING").upper())
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _load_config(args.config)
        if args.command == "select":
            cmd_select(config, args.out, args.seed)
        elif args.command == "simulate":
            cmd_simulate(config, args.out, args.seed)
        elif args.command == "ablate":
            cmd_ablate(config, args.out, args.seed, args.jobs)
        elif args.command == "inspect":
            cmd_inspect(config, args.out, args.seed)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
