"""Command-line entry point: config-driven, reproducible pipeline runs.

Subcommands: ingest, train, eval, lodo, report. A sectioned key-value config
file names every input; a single master seed expands into per-purpose
sub-seeds (split, training, fold sampling) so runs are bit-reproducible and
enabling one feature never perturbs another's random stream.

Exit codes are stable contracts: 0 ok, 2 ingest problem, 3 training
problem, 4 evaluation problem, 5 report problem.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .evaluation import (PredictionRow, ReportError, build_eval_report, pearson,
                         ranked_gains, read_history_csv, stability_report,
                         summary_entries, write_grouped_csv, write_history_csv,
                         write_lodo_gains_csv, write_predictions_csv,
                         write_stability_csv, write_summary)
from .model import (CheckpointError, ModelConfig, load_checkpoint, predict_records,
                    save_checkpoint)
from .molgraph import GraphError, load_drug_manifest, pad_graph
from .omics import (FEATURE_SOURCES, CellFeatureSet, IngestError, ResponseDataset,
                    alignment_stats, expression_feature_set, join_dataset,
                    load_embeddings, load_expression, load_gene_list, load_responses)
from .seeding import derive_seed
from .training import (DivergenceError, SplitError, SplitSpec, TrainConfig,
                       lodo_splits, split_dataset, train)

EXIT_OK = 0
EXIT_INGEST = 2
EXIT_TRAIN = 3
EXIT_EVAL = 4
EXIT_REPORT = 5

# flag spelling -> internal source name
SOURCE_ALIASES = {"scgpt": "scgpt", "scfoundation": "scfoundation", "raw": "raw_expression"}


class ConfigError(ValueError):
    """The run configuration is missing or inconsistent."""


@dataclass
class RunConfig:
    """Everything a run needs, resolved from one config file plus overrides."""

    config_path: Path
    paths: dict[str, Path]
    output_dir: Path
    seed: int
    feature_source: str
    model: dict
    train_cfg: TrainConfig
    split: SplitSpec
    lodo_n_drugs: int
    lodo_variants: list[str]
    lodo_baseline: str


def _split_dims(raw: str) -> tuple[int, ...]:
    return tuple(int(part) for part in raw.replace(" ", "").split(",") if part)


def load_run_config(path, seed=None, out=None, feature_source=None) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser()
    cp.read(path, encoding="utf-8")
    base = path.parent

    paths = {}
    if cp.has_section("paths"):
        for key, value in cp.items("paths"):
            if key == "output_dir" or not value.strip():
                continue
            p = Path(value.strip())
            paths[key] = p if p.is_absolute() else base / p

    out_raw = out or (cp.get("paths", "output_dir", fallback="out"))
    output_dir = Path(out_raw)
    if not output_dir.is_absolute() and out is None:
        output_dir = base / output_dir

    source_raw = feature_source or cp.get("run", "feature_source", fallback="scgpt")
    source = SOURCE_ALIASES.get(source_raw, source_raw)
    if source not in FEATURE_SOURCES:
        raise ConfigError(f"unknown feature source {source_raw!r}")

    model = {
        "gcn_layer_dims": _split_dims(cp.get("model", "gcn_layer_dims", fallback="256,128")),
        "cell_branch_dims": _split_dims(cp.get("model", "cell_branch_dims", fallback="128")),
        "head_dims": _split_dims(cp.get("model", "head_dims", fallback="128,1")),
        "dropout_rate": cp.getfloat("model", "dropout_rate", fallback=0.1),
        "use_batch_norm": cp.getboolean("model", "use_batch_norm", fallback=True),
        "task": cp.get("model", "task", fallback="regression"),
        "n_max_atoms": cp.getint("model", "n_max_atoms", fallback=100),
    }

    patience_raw = cp.get("train", "early_stop_patience", fallback="").strip()
    train_cfg = TrainConfig(
        epochs=cp.getint("train", "epochs", fallback=20),
        batch_size=cp.getint("train", "batch_size", fallback=32),
        lr=cp.getfloat("train", "lr", fallback=1e-3),
        seed=0,  # overwritten per purpose below
        early_stop_patience=int(patience_raw) if patience_raw else None,
    )

    cap_raw = cp.get("split", "train_cap", fallback="90000").strip()
    split = SplitSpec(
        test_fraction=cp.getfloat("split", "test_fraction", fallback=0.05),
        train_cap=int(cap_raw) if cap_raw else None,
        cap_mode=cp.get("split", "cap_mode", fallback="slice"),
        seed=0,
    )

    master = seed if seed is not None else cp.getint("run", "seed", fallback=0)
    variants_raw = cp.get("lodo", "variants", fallback="scgpt").replace(" ", "")
    variants = [SOURCE_ALIASES.get(v, v) for v in variants_raw.split(",") if v]
    baseline = cp.get("lodo", "baseline", fallback="raw")
    return RunConfig(
        config_path=path,
        paths=paths,
        output_dir=output_dir,
        seed=master,
        feature_source=source,
        model=model,
        train_cfg=train_cfg,
        split=split,
        lodo_n_drugs=cp.getint("lodo", "n_drugs", fallback=20),
        lodo_variants=variants,
        lodo_baseline=SOURCE_ALIASES.get(baseline, baseline),
    )


def _require_path(cfg: RunConfig, key: str) -> Path:
    p = cfg.paths.get(key)
    if p is None:
        raise ConfigError(f"config {cfg.config_path} does not set paths.{key}")
    if not p.exists():
        raise ConfigError(f"paths.{key} does not exist: {p}")
    return p


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# data assembly
# ---------------------------------------------------------------------------

def load_cells(cfg: RunConfig, source: str) -> tuple[CellFeatureSet, dict]:
    """Feature vectors for one source plus ingestion-report entries."""
    entries: dict[str, object] = {}
    if source == "raw_expression":
        profiles = load_expression(_require_path(cfg, "expression"))
        genes = load_gene_list(_require_path(cfg, "gene_list"))
        padded, dropped = alignment_stats(profiles[0], genes) if profiles else (0, 0)
        entries["expression.rows"] = len(profiles)
        entries["genes.canonical"] = len(genes)
        entries["genes.padded"] = padded
        entries["genes.dropped"] = dropped
        cells = expression_feature_set(profiles, genes)
    else:
        cells = load_embeddings(_require_path(cfg, f"embeddings_{source}"), source)
    entries["cells.rows"] = len(cells.vectors)
    entries["cells.dim"] = cells.dim
    return cells, entries


def assemble_dataset(cfg: RunConfig, source: str) -> tuple[ResponseDataset, dict]:
    """Load graphs, cells, and responses for one source and join them."""
    entries: dict[str, object] = {"feature_source": source}
    graphs = load_drug_manifest(_require_path(cfg, "drug_manifest"))
    padded = {d: pad_graph(g, cfg.model["n_max_atoms"]) for d, g in graphs.items()}
    entries["drugs.rows"] = len(padded)
    cells, cell_entries = load_cells(cfg, source)
    entries.update(cell_entries)
    responses = load_responses(_require_path(cfg, "responses"))
    entries["responses.rows"] = len(responses)
    dataset, stats = join_dataset(responses, padded, cells)
    entries["join.matched"] = stats.matched
    entries["join.missing_drug"] = stats.missing_drug
    entries["join.missing_cell"] = stats.missing_cell
    return dataset, entries


def model_config(cfg: RunConfig, cell_dim: int) -> ModelConfig:
    return ModelConfig(cell_input_dim=cell_dim, **cfg.model)


def _split_sets(cfg: RunConfig, dataset: ResponseDataset):
    spec = SplitSpec(test_fraction=cfg.split.test_fraction, train_cap=cfg.split.train_cap,
                     cap_mode=cfg.split.cap_mode, seed=derive_seed(cfg.seed, "split"))
    train_records, test_records = split_dataset(dataset.records, spec)
    return dataset.subset(train_records), dataset.subset(test_records)


def _prediction_rows(dataset: ResponseDataset, preds: np.ndarray) -> list[PredictionRow]:
    return [
        PredictionRow(drug_id=r.drug_id, cell_line_id=r.cell_line_id,
                      predicted=float(p), observed=r.ic50, cancer_type=r.cancer_type)
        for r, p in zip(dataset.records, preds)
    ]


def write_run_manifest(path: Path, cfg: RunConfig, extra: dict) -> None:
    entries: dict[str, object] = {
        "package_version": __version__,
        "seed": cfg.seed,
        "feature_source": cfg.feature_source,
        "config_sha256": _sha256(cfg.config_path),
    }
    for key in sorted(cfg.paths):
        if cfg.paths[key].exists():
            entries[f"data.{key}.sha256"] = _sha256(cfg.paths[key])
    entries.update(extra)
    write_summary(path, entries)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_ingest(cfg: RunConfig) -> int:
    dataset, entries = assemble_dataset(cfg, cfg.feature_source)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    write_summary(cfg.output_dir / "ingest_report.txt", entries)
    print(f"ingested {entries['join.matched']} matched records "
          f"({entries['join.missing_drug']} missing drug, "
          f"{entries['join.missing_cell']} missing cell)")
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    dataset, entries = assemble_dataset(cfg, cfg.feature_source)
    train_set, test_set = _split_sets(cfg, dataset)
    mcfg = model_config(cfg, dataset.cells.dim)
    tcfg = TrainConfig(epochs=cfg.train_cfg.epochs, batch_size=cfg.train_cfg.batch_size,
                       lr=cfg.train_cfg.lr, seed=derive_seed(cfg.seed, "train"),
                       early_stop_patience=cfg.train_cfg.early_stop_patience)
    params, history = train(train_set, test_set, mcfg, tcfg)

    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(cfg.output_dir / "checkpoint.ckpt", mcfg, params)
    write_history_csv(cfg.output_dir / "history.csv", cfg.feature_source, history)
    write_summary(cfg.output_dir / "ingest_report.txt", entries)
    write_run_manifest(cfg.output_dir / "run_manifest.txt", cfg, {
        "train.records": len(train_set.records),
        "test.records": len(test_set.records),
        "train.epochs_run": len(history),
    })
    if history:
        last = history[-1]
        pcc = "undefined" if last.val_pcc is None else f"{last.val_pcc:.4f}"
        print(f"trained {len(history)} epochs; final val_pcc {pcc}")
    else:
        print("trained 0 epochs; checkpoint holds the initial parameters")
    return EXIT_OK


def cmd_eval(cfg: RunConfig, checkpoint: Path | None) -> int:
    ckpt_path = checkpoint or (cfg.output_dir / "checkpoint.ckpt")
    if not Path(ckpt_path).exists():
        raise CheckpointError(f"checkpoint not found: {ckpt_path}")
    saved_cfg, params = load_checkpoint(ckpt_path)
    dataset, _ = assemble_dataset(cfg, cfg.feature_source)
    expected = model_config(cfg, dataset.cells.dim)
    if saved_cfg != expected:
        raise CheckpointError(
            f"checkpoint {ckpt_path} was trained with a different configuration "
            f"than the one this config and feature source imply")
    _, test_set = _split_sets(cfg, dataset)
    preds = predict_records(params, saved_cfg, test_set)
    rows = _prediction_rows(test_set, preds)
    report = build_eval_report(rows)

    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    write_predictions_csv(cfg.output_dir / "predictions.csv", rows)
    for kind, stats in report.grouped.items():
        write_grouped_csv(cfg.output_dir / f"grouped_pcc_{kind}.csv", stats)
    write_summary(cfg.output_dir / "summary.txt", summary_entries(report))
    overall = "undefined" if report.overall_pcc is None else f"{report.overall_pcc:.4f}"
    print(f"evaluated {report.n_predictions} predictions; overall pcc {overall}")
    return EXIT_OK


def cmd_lodo(cfg: RunConfig) -> int:
    variants = list(dict.fromkeys(cfg.lodo_variants))
    if cfg.lodo_baseline in variants:
        variants.remove(cfg.lodo_baseline)
    if not variants:
        raise ConfigError("lodo needs at least one non-baseline variant")
    sources = [cfg.lodo_baseline] + variants

    datasets: dict[str, ResponseDataset] = {}
    for source in sources:
        datasets[source], _ = assemble_dataset(cfg, source)

    common_drugs = set.intersection(
        *({r.drug_id for r in datasets[s].records} for s in sources))
    anchor = [r for r in datasets[cfg.lodo_baseline].records if r.drug_id in common_drugs]
    folds = lodo_splits(anchor, cfg.lodo_n_drugs, derive_seed(cfg.seed, "lodo-drugs"))
    fold_drugs = [drug for drug, _, _ in folds]

    pccs: dict[str, dict[str, float]] = {s: {} for s in sources}
    undefined: list[str] = []
    for drug in fold_drugs:
        for source in sources:
            ds = datasets[source]
            train_set = ds.subset([r for r in ds.records if r.drug_id != drug])
            test_set = ds.subset([r for r in ds.records if r.drug_id == drug])
            mcfg = model_config(cfg, ds.cells.dim)
            tcfg = TrainConfig(
                epochs=cfg.train_cfg.epochs, batch_size=cfg.train_cfg.batch_size,
                lr=cfg.train_cfg.lr, seed=derive_seed(cfg.seed, f"lodo:{source}:{drug}"),
                early_stop_patience=cfg.train_cfg.early_stop_patience)
            try:
                params, _ = train(train_set, test_set, mcfg, tcfg)
            except (DivergenceError, SplitError) as exc:
                raise DivergenceError(f"fold {drug!r} variant {source!r}: {exc}") from exc
            preds = predict_records(params, mcfg, test_set)
            pcc = pearson(preds, test_set.labels())
            if pcc is None:
                undefined.append(f"{source}:{drug}")
            else:
                pccs[source][drug] = pcc
        print(f"fold {drug}: " + ", ".join(
            f"{s}={pccs[s].get(drug, float('nan')):.3f}" for s in sources))

    scored = [d for d in fold_drugs if all(d in pccs[s] for s in sources)]
    rows = ranked_gains({v: {d: pccs[v][d] for d in scored} for v in variants},
                        {d: pccs[cfg.lodo_baseline][d] for d in scored})
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    write_lodo_gains_csv(cfg.output_dir / "lodo_gains.csv", rows)
    write_summary(cfg.output_dir / "lodo_summary.txt", {
        "baseline": cfg.lodo_baseline,
        "variants": ",".join(variants),
        "folds": len(fold_drugs),
        "folds_scored": len(scored),
        "folds_undefined": ";".join(undefined) if undefined else "none",
    })
    print(f"lodo finished: {len(scored)} of {len(fold_drugs)} folds scored")
    return EXIT_OK


def cmd_report(run_dirs: list[Path], out: Path) -> int:
    histories = {}
    for run_dir in run_dirs:
        path = Path(run_dir) / "history.csv"
        if not path.exists():
            raise ReportError(f"no history.csv in {run_dir}")
        for model_name, records in read_history_csv(path).items():
            key = model_name if model_name not in histories else f"{Path(run_dir).name}:{model_name}"
            histories[key] = records
    report = stability_report(histories)
    out.mkdir(parents=True, exist_ok=True)
    write_stability_csv(out / "stability.csv", report)
    entries: dict[str, object] = {}
    for name in sorted(report.summary):
        s = report.summary[name]
        entries[f"{name}.max_pcc"] = "undefined" if s.max_pcc is None else s.max_pcc
        entries[f"{name}.final_pcc"] = "undefined" if s.final_pcc is None else s.final_pcc
        entries[f"{name}.fluctuation"] = s.fluctuation
    write_summary(out / "stability_summary.txt", entries)
    print(f"merged {len(histories)} histories over epochs "
          f"{report.epochs[0]}..{report.epochs[-1]}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing and dispatch
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cdrpipe",
        description="Drug-response prediction pipeline: ingest, train, evaluate.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", required=True, help="run configuration file")
        p.add_argument("--seed", type=int, default=None, help="override the master seed")
        p.add_argument("--out", default=None, help="override the output directory")
        p.add_argument("--feature-source", choices=sorted(SOURCE_ALIASES),
                       default=None, help="override the cell feature source")

    add_common(sub.add_parser("ingest", help="load, validate, and join all inputs"))
    add_common(sub.add_parser("train", help="train one model variant"))
    p_eval = sub.add_parser("eval", help="grouped-PCC evaluation of a checkpoint")
    add_common(p_eval)
    p_eval.add_argument("--checkpoint", default=None, help="checkpoint to evaluate")
    add_common(sub.add_parser("lodo", help="paired leave-one-drug-out comparison"))
    p_rep = sub.add_parser("report", help="merge run histories into stability tables")
    p_rep.add_argument("run_dirs", nargs="+", help="run directories holding history.csv")
    p_rep.add_argument("--out", default=".", help="where to write the report")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            return cmd_report([Path(d) for d in args.run_dirs], Path(args.out))
        cfg = load_run_config(args.config, seed=args.seed, out=args.out,
                              feature_source=args.feature_source)
        if args.command == "ingest":
            return cmd_ingest(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            checkpoint = Path(args.checkpoint) if args.checkpoint else None
            return cmd_eval(cfg, checkpoint)
        if args.command == "lodo":
            return cmd_lodo(cfg)
        raise AssertionError(f"unhandled command {args.command}")
    except (ConfigError, IngestError, GraphError, SplitError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INGEST
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TRAIN
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EVAL
    except ReportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_REPORT


if __name__ == "__main__":
    sys.exit(main())
