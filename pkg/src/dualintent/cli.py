"""Command-line harness: prepare, train, evaluate, ablate, diagnose."""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import data as dt
from . import diagnostics as dg
from . import evaluator as ev
from . import model as md
from . import trainer as tr
from .errors import DataError, NumericError
from .losses import LossToggles
from .rng import substream
from .semantic import SemanticStore, load_semantic_vectors, synth_semantic_vectors
from .variants import VARIANT_NAMES, apply_variant

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

_ENV_OUT = "DUALINTENT_OUT"

# TrainConfig fields settable through config files and --set overrides.
_CONFIG_FIELDS = {
    f.name: f.type
    for f in dataclasses.fields(tr.TrainConfig)
    if f.name != "toggles"
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(EXIT_USAGE)


@dataclasses.dataclass
class ExperimentSpec:
    """Everything needed to reproduce one training run."""

    data_dir: Path
    config: tr.TrainConfig
    variant: str
    seeds: list[int]
    out_dir: Path
    semantic_user: Path | None = None
    semantic_item: Path | None = None
    synth_dim: int = 64
    synth_clusters: int = 5
    synth_noise: float = 0.1


def _parse_scalar(name: str, raw: str):
    if name not in _CONFIG_FIELDS:
        raise ValueError(f"unknown config key {name!r}")
    if raw.lower() in ("true", "false"):
        return raw.lower() == "true"
    if raw.lower() in ("none", "null"):
        return None
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        return raw


def load_config_file(path) -> dict:
    """Flat ``key=value`` lines; '#' starts a comment."""
    values = {}
    for line_number, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise DataError(f"{path}:{line_number}: expected key=value")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        values[key] = _parse_scalar(key, raw)
    return values


def build_config(file_values: dict, overrides: dict) -> tr.TrainConfig:
    merged = dict(file_values)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return tr.TrainConfig(**merged)


def _out_dir(arg: str | None, default_name: str) -> Path:
    root = Path(os.environ.get(_ENV_OUT, "."))
    out = Path(arg) if arg else root / default_name
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, payload):
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# -- prepare ---------------------------------------------------------------


def run_prepare(raw_path, k: int, seed: int, out_dir, min_rating=None) -> dict:
    """Filter, split and persist a raw interaction file; returns the stats."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    edges = dt.load_interactions(raw_path, min_rating=min_rating)
    edges = dt.k_core_filter(edges, k)
    edges = dt.largest_connected_component(edges)
    split = dt.split_dataset(edges, seed)
    stats = dt.dataset_stats(edges)
    dt.write_edges_tsv(out / "filtered.tsv", edges)
    dt.write_edges_tsv(out / "train.tsv", split.train)
    dt.write_edges_tsv(out / "validation.tsv", split.validation)
    dt.write_edges_tsv(out / "test.tsv", split.test)
    _write_json(out / "dataset_stats.json", stats)
    return stats


def _load_store(spec: ExperimentSpec, graph: dt.InteractionGraph) -> SemanticStore:
    if spec.semantic_user and spec.semantic_item:
        return load_semantic_vectors(
            spec.semantic_user, spec.semantic_item, graph.user_count, graph.item_count
        )
    synth_seed = int(substream(spec.config.seed, "semantic").integers(0, 2**31 - 1))
    return synth_semantic_vectors(
        graph, spec.synth_dim, spec.synth_clusters, spec.synth_noise, synth_seed
    )


def _metric_summary(report: ev.MetricsReport) -> dict:
    return report.as_dict()


def run_train(spec: ExperimentSpec) -> dict:
    """Fit per seed, evaluate on test, and persist metrics + checkpoints."""
    split = dt.read_split_dir(spec.data_dir)
    config = apply_variant(spec.config, spec.variant)
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "train_log.jsonl"
    if log_path.exists():
        log_path.unlink()
    graph = dt.build_graph(split.train)
    # The semantic store is part of the dataset: fixed across seeds.
    store = _load_store(spec, graph)
    data = tr.TrainingData.build(split, store, graph=graph)
    per_seed = {}
    timings = {}
    for seed in spec.seeds:
        seeded = dataclasses.replace(config, seed=seed)
        state = md.init_model(
            user_count=data.graph.user_count,
            item_count=data.graph.item_count,
            source_dim=data.store.source_dim,
            dim=seeded.dim,
            intent_count=seeded.intent_count,
            eta=seeded.eta,
            kappa=seeded.kappa,
            rng=substream(seed, "init"),
            hidden=seeded.hidden,
        )
        report, best = tr.fit(state, data, seeded, log_path=log_path)
        md.save_checkpoint(out / f"checkpoint_seed{seed}.bin", best)
        user_vecs, item_vecs = md.reconstruct_populations(
            best, data.graph, data.store,
            use_dual_intent=seeded.toggles.use_dual_intent, hops=seeded.layers,
        )
        ctx = ev.EvalContext(user_vecs=user_vecs, item_vecs=item_vecs)
        groups = ev.sparsity_groups(split.train) if split.train.user_count >= 4 else None
        metrics = ev.evaluate(ctx, split.train, split.test, group_map=groups)
        fit_record = report.as_dict()
        # Wall times vary between runs; keep metrics.json byte-reproducible.
        timings[str(seed)] = fit_record.pop("epoch_seconds")
        per_seed[str(seed)] = {
            "metrics": _metric_summary(metrics),
            "fit": fit_record,
        }
    cutoffs = (5, 10, 20)
    mean = {
        f"{metric}@{n}": float(
            np.mean([per_seed[s]["metrics"][f"{metric}@{n}"] for s in per_seed])
        )
        for metric in ("recall", "ndcg")
        for n in cutoffs
    }
    payload = {"variant": spec.variant, "seeds": spec.seeds, "per_seed": per_seed, "mean": mean}
    _write_json(out / "metrics.json", payload)
    _write_json(out / "timings.json", timings)
    return payload


def run_evaluate(checkpoint, data_dir, out_dir, spec: ExperimentSpec) -> dict:
    split = dt.read_split_dir(data_dir)
    graph = dt.build_graph(split.train)
    store = _load_store(spec, graph)
    state = md.load_checkpoint(checkpoint)
    config = apply_variant(spec.config, spec.variant)
    user_vecs, item_vecs = md.reconstruct_populations(
        state, graph, store, use_dual_intent=config.toggles.use_dual_intent, hops=config.layers
    )
    ctx = ev.EvalContext(user_vecs=user_vecs, item_vecs=item_vecs)
    groups = ev.sparsity_groups(split.train) if split.train.user_count >= 4 else None
    metrics = ev.evaluate(ctx, split.train, split.test, group_map=groups)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "metrics.json", _metric_summary(metrics))
    if metrics.groups:
        _write_json(out / "sparsity_groups.json", metrics.groups)
    return _metric_summary(metrics)


def run_ablation_matrix(spec: ExperimentSpec, variant_names) -> list[dict]:
    """Run every variant; failures isolate to their own row."""
    rows = []
    for name in variant_names:
        variant_out = Path(spec.out_dir) / name
        try:
            payload = run_train(dataclasses.replace(spec, variant=name, out_dir=variant_out))
            recalls = [payload["per_seed"][s]["metrics"]["recall@20"] for s in payload["per_seed"]]
            ndcgs = [payload["per_seed"][s]["metrics"]["ndcg@20"] for s in payload["per_seed"]]
            rows.append(
                {
                    "variant": name,
                    "status": "ok",
                    "recall@20_mean": float(np.mean(recalls)),
                    "recall@20_std": float(np.std(recalls)),
                    "ndcg@20_mean": float(np.mean(ndcgs)),
                    "ndcg@20_std": float(np.std(ndcgs)),
                    "recall@20_per_seed": recalls,
                    "ndcg@20_per_seed": ndcgs,
                }
            )
        except (DataError, NumericError, ValueError) as exc:
            rows.append({"variant": name, "status": "error", "message": str(exc)})
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "ablation.json", rows)
    _write_ablation_tsv(out / "ablation.tsv", rows)
    _write_significance(out / "significance.json", rows)
    return rows


_TSV_COLUMNS = (
    "variant",
    "status",
    "recall@20_mean",
    "recall@20_std",
    "ndcg@20_mean",
    "ndcg@20_std",
    "recall@20_per_seed",
    "ndcg@20_per_seed",
    "message",
)


def _write_ablation_tsv(path: Path, rows: list[dict]):
    def cell(row, column):
        value = row.get(column, "")
        if isinstance(value, list):
            return ",".join(repr(float(x)) for x in value)
        if isinstance(value, float):
            return repr(value)
        return str(value)

    lines = ["\t".join(_TSV_COLUMNS) + "\n"]
    for row in rows:
        lines.append("\t".join(cell(row, c) for c in _TSV_COLUMNS) + "\n")
    path.write_text("".join(lines), encoding="utf-8")


def read_ablation_tsv(path) -> list[dict]:
    """Reload an ablation table, recovering per-seed metric arrays."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    header = lines[0].split("\t")
    rows = []
    for line in lines[1:]:
        if not line.strip():
            continue
        cells = dict(zip(header, line.split("\t")))
        row: dict = {"variant": cells["variant"], "status": cells["status"]}
        for column in header:
            if column.endswith("_per_seed") and cells.get(column):
                row[column] = [float(x) for x in cells[column].split(",")]
            elif column.endswith("_mean") or column.endswith("_std"):
                if cells.get(column):
                    row[column] = float(cells[column])
        rows.append(row)
    return rows


def _write_significance(path: Path, rows: list[dict]):
    by_name = {row["variant"]: row for row in rows if row.get("status") == "ok"}
    full = by_name.get("full")
    if full is None or len(full.get("recall@20_per_seed", [])) < 2:
        return
    results = {}
    for name, row in by_name.items():
        if name == "full":
            continue
        try:
            results[name] = {
                "recall@20_p": ev.paired_t_test(
                    full["recall@20_per_seed"], row["recall@20_per_seed"]
                )
            }
        except NumericError as exc:
            results[name] = {"error": str(exc)}
    _write_json(path, results)


def run_diagnostics(checkpoint, data_dir, out_dir, spec: ExperimentSpec, sample_size=256, dump_grad_norms=False) -> dict:
    split = dt.read_split_dir(data_dir)
    graph = dt.build_graph(split.train)
    store = _load_store(spec, graph)
    state = md.load_checkpoint(checkpoint)
    config = apply_variant(spec.config, spec.variant)
    user_vecs, item_vecs = md.reconstruct_populations(
        state, graph, store, use_dual_intent=config.toggles.use_dual_intent, hops=config.layers
    )
    geometry = dg.measure_geometry(
        user_vecs, item_vecs, split.train, sample_size=sample_size, seed=config.seed
    )
    agreement = dg.gradient_agreement_suite(seed=config.seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload = {"geometry": geometry.as_dict(), "gradient_agreement": agreement}
    _write_json(out / "geometry.json", payload)
    if dump_grad_norms:
        lines = ["population\tindex\tgrad_norm\n"]
        for i, norm in enumerate(geometry.user_grad_norms):
            lines.append(f"user\t{i}\t{norm!r}\n")
        for i, norm in enumerate(geometry.item_grad_norms):
            lines.append(f"item\t{i}\t{norm!r}\n")
        (out / "grad_norms.tsv").write_text("".join(lines), encoding="utf-8")
    if not agreement["passed"]:
        raise NumericError("uniformity gradient agreement suite failed")
    return payload


# -- argument plumbing --------------------------------------------------------


def _add_spec_args(parser: argparse.ArgumentParser):
    parser.add_argument("--data-dir", required=True, help="directory written by 'prepare'")
    parser.add_argument("--config", help="key=value config file")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a single config key (repeatable)")
    parser.add_argument("--variant", default="full", choices=VARIANT_NAMES)
    parser.add_argument("--seed", type=int, action="append", help="seed (repeatable)")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--semantic-user", help="precomputed user vectors")
    parser.add_argument("--semantic-item", help="precomputed item vectors")
    parser.add_argument("--synth-dim", type=int, default=64)
    parser.add_argument("--synth-clusters", type=int, default=5)
    parser.add_argument("--synth-noise", type=float, default=0.1)


def _spec_from_args(args, default_out: str) -> ExperimentSpec:
    file_values = load_config_file(args.config) if args.config else {}
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise DataError(f"--set expects KEY=VALUE, got {item!r}")
        key, raw = item.split("=", 1)
        overrides[key.strip()] = _parse_scalar(key.strip(), raw.strip())
    seeds = args.seed if args.seed else [0]
    base_seed = seeds[0]
    file_values.setdefault("seed", base_seed)
    config = build_config(file_values, overrides)
    return ExperimentSpec(
        data_dir=Path(args.data_dir),
        config=config,
        variant=args.variant,
        seeds=list(seeds),
        out_dir=_out_dir(args.out, default_out),
        semantic_user=Path(args.semantic_user) if args.semantic_user else None,
        semantic_item=Path(args.semantic_item) if args.semantic_item else None,
        synth_dim=args.synth_dim,
        synth_clusters=args.synth_clusters,
        synth_noise=args.synth_noise,
    )


def make_parser() -> _Parser:
    parser = _Parser(prog="dualintent", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    prepare = sub.add_parser("prepare", help="filter, split and persist a raw TSV")
    prepare.add_argument("raw", help="interactions.tsv (user\\titem[\\trating])")
    prepare.add_argument("--min-rating", type=float, default=None)
    prepare.add_argument("--k", type=int, default=5, help="k-core threshold")
    prepare.add_argument("--seed", type=int, default=0)
    prepare.add_argument("--out", help="output directory")

    train = sub.add_parser("train", help="train one variant over one or more seeds")
    _add_spec_args(train)

    evaluate = sub.add_parser("evaluate", help="evaluate a checkpoint on the test split")
    evaluate.add_argument("--checkpoint", required=True)
    _add_spec_args(evaluate)

    ablate = sub.add_parser("ablate", help="run a matrix of variants")
    ablate.add_argument("--variants", nargs="+", default=list(VARIANT_NAMES))
    _add_spec_args(ablate)

    diagnose = sub.add_parser("diagnose", help="geometry report + gradient checks")
    diagnose.add_argument("--checkpoint", required=True)
    diagnose.add_argument("--sample-size", type=int, default=256)
    diagnose.add_argument("--dump-grad-norms", action="store_true")
    _add_spec_args(diagnose)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "prepare":
            out = _out_dir(args.out, "prepared")
            stats = run_prepare(args.raw, args.k, args.seed, out, min_rating=args.min_rating)
            print(json.dumps(stats))
        elif args.command == "train":
            spec = _spec_from_args(args, "run")
            payload = run_train(spec)
            print(json.dumps(payload["mean"]))
        elif args.command == "evaluate":
            spec = _spec_from_args(args, "eval")
            metrics = run_evaluate(args.checkpoint, args.data_dir, spec.out_dir, spec)
            print(json.dumps({k: v for k, v in metrics.items() if k != "groups"}))
        elif args.command == "ablate":
            spec = _spec_from_args(args, "ablation")
            for name in args.variants:
                if name not in VARIANT_NAMES:
                    raise DataError(f"unknown variant {name!r}")
            rows = run_ablation_matrix(spec, args.variants)
            print(json.dumps([{k: row.get(k) for k in ("variant", "status")} for row in rows]))
        elif args.command == "diagnose":
            spec = _spec_from_args(args, "diagnosis")
            payload = run_diagnostics(
                args.checkpoint,
                args.data_dir,
                spec.out_dir,
                spec,
                sample_size=args.sample_size,
                dump_grad_norms=args.dump_grad_norms,
            )
            print(json.dumps(payload["gradient_agreement"]))
    except FileNotFoundError as exc:
        sys.stderr.write(f"error: missing file: {exc}\n")
        return EXIT_DATA
    except DataError as exc:
        sys.stderr.write(f"data error: {exc}\n")
        return EXIT_DATA
    except NumericError as exc:
        sys.stderr.write(f"numeric error: {exc}\n")
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
