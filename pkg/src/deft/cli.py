"""Command-line entry point: ``python -m deft <command> [flags]``."""

from __future__ import annotations

import argparse
import dataclasses
import sys
import time
from pathlib import Path

import numpy as np

from . import autograd as ag
from .chebyshev import filter_response_table, wavelet_vector
from .config import ConfigError, DeftConfig, build, format_value, parse_value, read_kv_file, write_kv_file
from .data import SbmConfig, generate_dynamic_sbm, heterophilic_sbm, homophilic_sbm, load_snapshots, save_snapshots, separable_sbm
from .graph import DynamicGraph, snapshot_from_edges
from .layers import load_checkpoint, save_checkpoint
from .model import DeftModel
from .tasks import TaskSpec, attach_head, evaluate, fit
from .verify import CHECK_HEADER, run_all

COMMANDS = ("generate", "train", "eval", "verify-lemmas", "filter-response", "wavelet", "bench")
PRESETS = {"default": SbmConfig, "separable": separable_sbm, "heterophilic": heterophilic_sbm, "homophilic": homophilic_sbm}


@dataclasses.dataclass(frozen=True)
class RunSettings:
    """Run-level keys that are neither model, task nor generator settings."""

    epochs: int = 50
    lr: float = 1e-2
    runs: int = 1
    preset: str = "separable"
    split: str = "test"
    timestep: int = 0
    node: int = 0
    n_grid: int = 101
    sizes: str = "1024,2048,4096,8192"
    bench_degree: int = 8


TASK_KEYS = {"task": "kind", "n_classes": "n_classes", "negatives_per_positive": "negatives_per_positive",
             "train_negatives": "train_negatives", "max_train_positives": "max_train_positives",
             "step_mode": "step_mode"}


@dataclasses.dataclass
class RunConfig:
    command: str
    out: Path
    data: Path | None
    checkpoint: Path | None
    model: DeftConfig
    task: TaskSpec
    sbm: SbmConfig
    run: RunSettings
    seed: int

    def resolved(self) -> dict[str, str]:
        out = {"command": self.command, "seed": str(self.seed)}
        out.update(self.model.to_mapping())
        out.update({k: format_value(getattr(self.task, f)) for k, f in TASK_KEYS.items()})
        out.update({f.name: format_value(getattr(self.sbm, f.name)) for f in dataclasses.fields(self.sbm) if f.name != "seed"})
        out.update({f.name: format_value(getattr(self.run, f.name)) for f in dataclasses.fields(self.run)})
        for k in ("data", "checkpoint"):
            if getattr(self, k) is not None:
                out[k] = str(getattr(self, k))
        return out


class CliError(RuntimeError):
    def __init__(self, module: str, msg: str):
        super().__init__(msg)
        self.module = module


def parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="deft", description="Learnable spectral graph wavelets on dynamic graphs.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", type=Path)
    p.add_argument("--task", choices=("lp", "ec", "nc"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--runs", type=int)
    p.add_argument("--filter-order", type=int, dest="filter_order")
    p.add_argument("--scales", type=str)
    p.add_argument("--aggregator", choices=("mlp", "gat", "transformer"))
    p.add_argument("--out", type=Path, default=Path("out"))
    p.add_argument("--data", type=Path, help="DEFT-SNAPSHOTS file (generated from the SBM settings if omitted)")
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--preset", choices=tuple(PRESETS))
    p.add_argument("--lr", type=float)
    p.add_argument("--split", choices=("val", "test"))
    p.add_argument("--timestep", type=int)
    p.add_argument("--node", type=int)
    p.add_argument("--sizes", type=str)
    return p


def _flag_overrides(ns: argparse.Namespace) -> dict[str, str]:
    keys = ("task", "epochs", "seed", "runs", "filter_order", "scales", "aggregator", "preset", "lr", "split",
            "timestep", "node", "sizes")
    return {k: str(getattr(ns, k)) for k in keys if getattr(ns, k) is not None}


def resolve(ns: argparse.Namespace) -> RunConfig:
    """CLI flag > config file > built-in default."""
    values = read_kv_file(ns.config) if ns.config else {}
    values.update(_flag_overrides(ns))
    model_keys = {f.name for f in dataclasses.fields(DeftConfig)}
    sbm_keys = {f.name for f in dataclasses.fields(SbmConfig)} - {"seed"}
    run_keys = {f.name for f in dataclasses.fields(RunSettings)}
    known = model_keys | sbm_keys | run_keys | set(TASK_KEYS) | {"seed"}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    seed = int(values.get("seed", 0))
    run = build(RunSettings, {k: v for k, v in values.items() if k in run_keys})
    if run.preset not in PRESETS:
        raise ConfigError(f"preset must be one of {tuple(PRESETS)}")
    model = build(DeftConfig, {k: v for k, v in values.items() if k in model_keys})
    task_raw = {TASK_KEYS[k]: v for k, v in values.items() if k in TASK_KEYS}
    try:
        task = build(TaskSpec, task_raw)
        base = PRESETS[run.preset](seed=seed)
        sbm_over = {k: v for k, v in values.items() if k in sbm_keys}
        sbm = dataclasses.replace(base, **{k: parse_value(v, getattr(base, k)) for k, v in sbm_over.items()})
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if run.epochs < 1 or run.runs < 1:
        raise ConfigError("epochs and runs must be >= 1")
    return RunConfig(ns.command, ns.out, ns.data, ns.checkpoint, model, task, sbm, run, seed)


def _csv_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8", newline="\n")


def _graph(cfg: RunConfig, seed: int | None = None) -> DynamicGraph:
    if cfg.data is not None:
        return load_snapshots(cfg.data)
    sbm = cfg.sbm if seed is None else dataclasses.replace(cfg.sbm, seed=seed)
    return generate_dynamic_sbm(sbm)


def _load_model(cfg: RunConfig, graph: DynamicGraph):
    """Model (with head) from --checkpoint, or a freshly initialized one."""
    model_cfg, task, in_dim, seed = cfg.model, cfg.task, graph[0].features.shape[1], cfg.seed
    state = None
    if cfg.checkpoint is not None:
        state, meta = load_checkpoint(cfg.checkpoint)
        model_cfg = build(DeftConfig, {k[len("model."):]: v for k, v in meta.items() if k.startswith("model.")})
        task = build(TaskSpec, {k[len("task."):]: v for k, v in meta.items() if k.startswith("task.")})
        in_dim = int(meta["in_dim"])
        if in_dim != graph[0].features.shape[1]:
            raise CliError("model", f"checkpoint expects {in_dim} features, data has {graph[0].features.shape[1]}")
    model = DeftModel(model_cfg, in_dim, seed)
    head = attach_head(model, task)
    if state is not None:
        model.store.load_state(state)
    return model, head, task


def _checkpoint_meta(model: DeftModel, task: TaskSpec) -> dict[str, str]:
    meta = {f"model.{k}": v for k, v in model.config.to_mapping().items()}
    meta.update({f"task.{f.name}": format_value(getattr(task, f.name)) for f in dataclasses.fields(task)})
    meta["in_dim"] = str(model.in_dim)
    return meta


def cmd_generate(cfg: RunConfig):
    save_snapshots(generate_dynamic_sbm(cfg.sbm), cfg.out / "graph.txt")


def _train_once(cfg: RunConfig, seed: int, out: Path) -> dict[str, float]:
    graph = _graph(cfg, seed)
    model = DeftModel(cfg.model, graph[0].features.shape[1], seed)
    head = attach_head(model, cfg.task)
    result = fit(graph, model, head, cfg.task, cfg.run.epochs, lr=cfg.run.lr, seed=seed)
    test = evaluate(graph, model, head, cfg.task, "test")
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model.store.state(), out / "model.ckpt", _checkpoint_meta(model, cfg.task))
    _csv_write(out / "loss.csv", result.val.loss_csv())
    metrics = {f"val_{k}": v for k, v in result.val.summary().items()}
    metrics.update({f"test_{k}": v for k, v in test.summary().items()})
    _csv_write(out / "metrics.csv", "metric,value\n" + "".join(f"{k},{v:.8g}\n" for k, v in metrics.items()))
    return metrics


def cmd_train(cfg: RunConfig):
    if cfg.run.runs == 1:
        _train_once(cfg, cfg.seed, cfg.out)
        return
    rows = [_train_once(cfg, cfg.seed + i, cfg.out / f"run_{i}") for i in range(cfg.run.runs)]
    lines = ["metric,mean,std"]
    for k in rows[0]:
        v = np.array([r[k] for r in rows])
        lines.append(f"{k},{v.mean():.8g},{v.std():.8g}")
        print(f"{k} {v.mean():.4f} +- {v.std():.4f}")
    _csv_write(cfg.out / "metrics_summary.csv", "\n".join(lines) + "\n")


def cmd_eval(cfg: RunConfig):
    graph = _graph(cfg)
    model, head, task = _load_model(cfg, graph)
    report = evaluate(graph, model, head, task, cfg.run.split)
    _csv_write(cfg.out / "metrics.csv", report.summary_csv())


def cmd_verify(cfg: RunConfig) -> int:
    rows = run_all()
    _csv_write(cfg.out / "lemmas.csv", CHECK_HEADER + "\n" + "".join(r.csv() + "\n" for r in rows))
    failed = [r for r in rows if not r.passed]
    for check in dict.fromkeys(r.check for r in rows):
        mine = [r for r in rows if r.check == check]
        print(f"{check}: {sum(r.passed for r in mine)}/{len(mine)} PASS")
    if failed:
        raise CliError("verify", f"{len(failed)} checks failed, first: {failed[0].check} {failed[0].fixture}")
    return 0


def _filter_at(cfg: RunConfig):
    graph = _graph(cfg)
    if not 0 <= cfg.run.timestep < len(graph):
        raise CliError("cli", f"timestep {cfg.run.timestep} outside [0, {len(graph)})")
    model, _, _ = _load_model(cfg, graph)
    return graph, model, model.filter_at(graph, cfg.run.timestep)


def cmd_filter_response(cfg: RunConfig):
    _, model, f = _filter_at(cfg)
    table = filter_response_table(f, model.scales, cfg.run.n_grid)
    _csv_write(cfg.out / "filter_response.csv", table.to_csv())


def cmd_wavelet(cfg: RunConfig):
    graph, model, f = _filter_at(cfg)
    g = graph[cfg.run.timestep]
    for j, s in enumerate(model.scales, 1):
        psi = wavelet_vector(f, s, g.laplacian, cfg.run.node, model.scales.clamp_mode, g.lambda_max)
        _csv_write(cfg.out / f"wavelet_s{j}.csv", "node,value\n" + "".join(f"{i},{v:.12g}\n" for i, v in enumerate(psi)))


def random_regular_snapshot(n: int, degree: int, rng: np.random.Generator, d: int = 8):
    """Union of degree/2 random Hamiltonian cycles; degree is exactly ``degree`` except where
    two cycles share an edge (rare for large n)."""
    edges = set()
    for _ in range(degree // 2):
        perm = rng.permutation(n)
        for a, b in zip(perm, np.roll(perm, -1)):
            edges.add((min(a, b), max(a, b)))
    return snapshot_from_edges(n, sorted(edges), features=rng.normal(size=(n, d)))


def bench_scaling(sizes, config: DeftConfig, degree: int = 8, repeats: int = 5, seed: int = 0):
    """Median forward time per size; returns (rows [(N, E, seconds)], log-log slope)."""
    rng = np.random.default_rng(seed)
    rows = []
    for n in sizes:
        g = random_regular_snapshot(n, degree, rng)
        model = DeftModel(config, g.features.shape[1], seed)
        with ag.no_grad():
            model.forward(g)  # warm the per-snapshot caches
            times = []
            for _ in range(repeats):
                t0 = time.perf_counter()
                model.forward(g)
                times.append(time.perf_counter() - t0)
        rows.append((n, g.n_edges, float(np.median(times))))
    slope = float(np.polyfit(np.log([r[0] for r in rows]), np.log([r[2] for r in rows]), 1)[0])
    return rows, slope


def cmd_bench(cfg: RunConfig):
    sizes = [int(x) for x in cfg.run.sizes.split(",") if x.strip()]
    if len(sizes) < 4 or sizes != sorted(sizes):
        raise ConfigError("bench needs at least 4 ascending sizes")
    rows, slope = bench_scaling(sizes, cfg.model, cfg.run.bench_degree, seed=cfg.seed)
    _csv_write(cfg.out / "bench.csv", "N,E,seconds\n" + "".join(f"{n},{e},{t:.8g}\n" for n, e, t in rows))
    _csv_write(cfg.out / "bench_fit.csv", f"metric,value\nloglog_slope,{slope:.8g}\n")
    print(f"log-log slope {slope:.3f}")


HANDLERS = {
    "generate": cmd_generate, "train": cmd_train, "eval": cmd_eval, "verify-lemmas": cmd_verify,
    "filter-response": cmd_filter_response, "wavelet": cmd_wavelet, "bench": cmd_bench,
}

MODULE_OF = {
    "GraphError": "graph_core", "SizeLimitError": "graph_core", "ParseError": "data_gen", "SamplingError": "tasks_eval",
    "ShapeError": "nn_core", "NumericError": "nn_core", "PreconditionError": "spectral_engine",
}


def main(argv=None) -> int:
    ns = parser().parse_args(argv)
    try:
        cfg = resolve(ns)
        cfg.out.mkdir(parents=True, exist_ok=True)
        write_kv_file(cfg.out / "config.resolved", cfg.resolved(), comment="effective configuration")
        HANDLERS[cfg.command](cfg)
    except ConfigError as exc:
        print(f"ERROR config: {exc}", file=sys.stderr)
        return 2
    except CliError as exc:
        print(f"ERROR {exc.module}: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError, RuntimeError, ArithmeticError, IndexError) as exc:
        module = MODULE_OF.get(type(exc).__name__, "cli")
        msg = str(exc).replace("\n", " ")
        print(f"ERROR {module}: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
