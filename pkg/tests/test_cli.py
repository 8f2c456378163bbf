"""End-to-end command-line pipeline tests on synthetic fixture files."""

import hashlib

import numpy as np
import pytest

from cdrpipe import cli
from cdrpipe.evaluation import read_history_csv, write_history_csv
from cdrpipe.model import ModelConfig, init_params, load_checkpoint, predict_records, save_checkpoint
from cdrpipe.omics import ResponseDataset
from cdrpipe.synthetic import make_benchmark, write_benchmark_files, write_response_csv
from cdrpipe.training import EpochRecord

MODEL_SECTION = """\
[model]
gcn_layer_dims = 12,8
cell_branch_dims = 8
head_dims = 8,1
dropout_rate = 0.1
use_batch_norm = true
task = regression
n_max_atoms = {n_max_atoms}
"""


def write_config(path, files, n_max_atoms, extra=""):
    path.write_text(f"""\
[paths]
expression = {files['expression']}
gene_list = {files['gene_list']}
embeddings_scgpt = {files['embeddings']}
drug_manifest = {files['drug_manifest']}
responses = {files['responses']}
output_dir = out

{MODEL_SECTION.format(n_max_atoms=n_max_atoms)}
[train]
epochs = 2
batch_size = 16
lr = 0.003

[split]
test_fraction = 0.1
train_cap =
cap_mode = slice

[run]
seed = 0
feature_source = scgpt

[lodo]
n_drugs = 1
variants = scgpt
baseline = raw
{extra}
""", encoding="utf-8")
    return path


@pytest.fixture(scope="module")
def fixture_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_fixture")
    bench = make_benchmark(n_cells=40, cell_dim=12, n_drugs=5, atom_range=(3, 7),
                           n_records=160, noise_std=0.05, seed=7)
    files = write_benchmark_files(bench, root / "data", embedding_width=512)
    config = write_config(root / "run.ini", files, bench.n_max_atoms)
    return {"root": root, "bench": bench, "files": files, "config": config}


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


class TestIngest:
    def test_reports_matched_records(self, fixture_dir, capsys):
        out = fixture_dir["root"] / "ingest_out"
        code = cli.main(["ingest", "--config", str(fixture_dir["config"]),
                         "--out", str(out)])
        assert code == 0
        report = dict(line.split("=", 1)
                      for line in (out / "ingest_report.txt").read_text().splitlines())
        assert report["join.matched"] == "160"
        assert report["cells.dim"] == "512"
        assert "160 matched" in capsys.readouterr().out

    def test_raw_source_reports_gene_padding(self, fixture_dir):
        out = fixture_dir["root"] / "ingest_raw_out"
        code = cli.main(["ingest", "--config", str(fixture_dir["config"]),
                         "--feature-source", "raw", "--out", str(out)])
        assert code == 0
        report = dict(line.split("=", 1)
                      for line in (out / "ingest_report.txt").read_text().splitlines())
        assert report["genes.padded"] == "2"  # two canonical genes absent from the matrix
        assert report["cells.dim"] == "14"

    def test_missing_embedding_file_names_the_path(self, fixture_dir, tmp_path, capsys):
        files = dict(fixture_dir["files"])
        files["embeddings"] = tmp_path / "nowhere.csv"
        config = write_config(tmp_path / "bad.ini", files,
                              fixture_dir["bench"].n_max_atoms)
        code = cli.main(["ingest", "--config", str(config), "--out", str(tmp_path / "o")])
        assert code == 2
        assert "nowhere.csv" in capsys.readouterr().err

    def test_embedding_width_mismatch(self, fixture_dir, tmp_path, capsys):
        narrow = tmp_path / "narrow"
        write_benchmark_files(fixture_dir["bench"], narrow)  # 12-wide, declared scgpt
        files = {k: narrow / v.name for k, v in fixture_dir["files"].items()}
        files["drug_manifest"] = narrow / "drug_manifest.csv"
        config = write_config(tmp_path / "mismatch.ini", files,
                              fixture_dir["bench"].n_max_atoms)
        code = cli.main(["ingest", "--config", str(config), "--out", str(tmp_path / "o")])
        assert code == 2
        assert "declares 512" in capsys.readouterr().err


class TestTrain:
    def test_fixed_seed_gives_identical_checkpoints(self, fixture_dir):
        outs = []
        for name in ("t1", "t2"):
            out = fixture_dir["root"] / name
            assert cli.main(["train", "--config", str(fixture_dir["config"]),
                             "--out", str(out)]) == 0
            outs.append(out)
        assert sha(outs[0] / "checkpoint.ckpt") == sha(outs[1] / "checkpoint.ckpt")
        assert sha(outs[0] / "history.csv") == sha(outs[1] / "history.csv")
        assert sha(outs[0] / "run_manifest.txt") == sha(outs[1] / "run_manifest.txt")

    def test_different_seed_changes_the_checkpoint(self, fixture_dir):
        out = fixture_dir["root"] / "t_seed"
        assert cli.main(["train", "--config", str(fixture_dir["config"]),
                         "--seed", "99", "--out", str(out)]) == 0
        assert sha(out / "checkpoint.ckpt") != sha(
            fixture_dir["root"] / "t1" / "checkpoint.ckpt")

    def test_zero_epochs_checkpoints_initial_params(self, fixture_dir, tmp_path):
        config = write_config(tmp_path / "zero.ini", fixture_dir["files"],
                              fixture_dir["bench"].n_max_atoms)
        text = config.read_text().replace("epochs = 2", "epochs = 0")
        config.write_text(text)
        out = tmp_path / "out"
        assert cli.main(["train", "--config", str(config), "--out", str(out)]) == 0
        cfg, params = load_checkpoint(out / "checkpoint.ckpt")
        from cdrpipe.seeding import derive_seed
        fresh = init_params(cfg, derive_seed(derive_seed(0, "train"), "init"))
        for (_, a), (_, b) in zip(params.named_arrays(), fresh.named_arrays()):
            assert a.tobytes() == b.tobytes()
        assert (out / "history.csv").read_text().splitlines() == [
            "epoch,model,val_pcc,train_loss"]

    def test_synthetic_fixture_reaches_high_pcc(self, tmp_path):
        """A convergence fixture: low noise, enough records, 12 epochs."""
        bench = make_benchmark(n_cells=120, cell_dim=12, n_drugs=6, atom_range=(3, 7),
                               n_records=700, noise_std=0.03, seed=7)
        files = write_benchmark_files(bench, tmp_path / "data", embedding_width=512)
        config = write_config(tmp_path / "run.ini", files, bench.n_max_atoms)
        config.write_text(config.read_text().replace("epochs = 2", "epochs = 12"))
        out = tmp_path / "out"
        assert cli.main(["train", "--config", str(config), "--out", str(out)]) == 0
        history = read_history_csv(out / "history.csv")["scgpt"]
        assert history[-1].val_pcc >= 0.9


class TestEval:
    def test_rerun_is_byte_identical(self, fixture_dir):
        train_out = fixture_dir["root"] / "t1"
        outs = []
        for name in ("e1", "e2"):
            out = fixture_dir["root"] / name
            assert cli.main(["eval", "--config", str(fixture_dir["config"]),
                             "--out", str(out),
                             "--checkpoint", str(train_out / "checkpoint.ckpt")]) == 0
            outs.append(out)
        for fname in ("predictions.csv", "grouped_pcc_drug.csv", "summary.txt"):
            assert sha(outs[0] / fname) == sha(outs[1] / fname)

    def test_perfect_oracle_checkpoint_scores_one_everywhere(self, tmp_path):
        """Labels generated by the model itself make every defined group PCC 1."""
        bench = make_benchmark(n_cells=30, cell_dim=12, n_drugs=4, atom_range=(3, 6),
                               n_records=110, noise_std=0.0, seed=3)
        files = write_benchmark_files(bench, tmp_path / "data", embedding_width=512)
        cfg = ModelConfig(gcn_layer_dims=(12, 8), cell_branch_dims=(8,), head_dims=(8, 1),
                          dropout_rate=0.1, n_max_atoms=bench.n_max_atoms,
                          cell_input_dim=512)
        params = init_params(cfg, seed=5)
        wide = {cid: np.concatenate([v, np.zeros(500)])
                for cid, v in bench.cells.vectors.items()}
        oracle_cells = type(bench.cells)("raw_expression", 512, wide)
        dataset = ResponseDataset(bench.records, bench.padded, oracle_cells)
        preds = predict_records(params, cfg, dataset)
        for record, value in zip(bench.records, preds):
            record.ic50 = float(value)
        write_response_csv(files["responses"], bench.records)
        ckpt = tmp_path / "oracle.ckpt"
        save_checkpoint(ckpt, cfg, params)

        config = write_config(tmp_path / "run.ini", files, bench.n_max_atoms)
        out = tmp_path / "out"
        assert cli.main(["eval", "--config", str(config), "--out", str(out),
                         "--checkpoint", str(ckpt)]) == 0
        for kind in ("cell_line", "cancer_type", "drug"):
            lines = (out / f"grouped_pcc_{kind}.csv").read_text().splitlines()[1:]
            assert lines, f"no defined groups for {kind}"
            for line in lines:
                assert float(line.split(",")[1]) == 1.0
        summary = dict(line.split("=", 1)
                       for line in (out / "summary.txt").read_text().splitlines())
        assert summary["overall.pcc"] == "1.0"

    def test_single_sample_groups_are_counted_undefined(self, fixture_dir):
        summary_path = fixture_dir["root"] / "e1" / "summary.txt"
        summary = dict(line.split("=", 1) for line in summary_path.read_text().splitlines())
        # 16 test records over 40 cell lines: singleton cell-line groups exist
        assert int(summary["groups.cell_line.undefined"]) > 0
        assert "groups.cell_line.undefined_ids" in summary

    def test_config_mismatch_exits_4(self, fixture_dir, capsys):
        train_out = fixture_dir["root"] / "t1"
        code = cli.main(["eval", "--config", str(fixture_dir["config"]),
                         "--feature-source", "raw",
                         "--out", str(fixture_dir["root"] / "e_mismatch"),
                         "--checkpoint", str(train_out / "checkpoint.ckpt")])
        assert code == 4
        assert "different configuration" in capsys.readouterr().err

    def test_missing_checkpoint_exits_4(self, fixture_dir):
        code = cli.main(["eval", "--config", str(fixture_dir["config"]),
                         "--out", str(fixture_dir["root"] / "e_none"),
                         "--checkpoint", str(fixture_dir["root"] / "ghost.ckpt")])
        assert code == 4


class TestLodo:
    def test_one_fold_yields_one_gain_row(self, fixture_dir, tmp_path):
        config = write_config(tmp_path / "lodo.ini", fixture_dir["files"],
                              fixture_dir["bench"].n_max_atoms)
        out = tmp_path / "out"
        assert cli.main(["lodo", "--config", str(config), "--out", str(out)]) == 0
        lines = (out / "lodo_gains.csv").read_text().splitlines()
        assert lines[0] == "drug_id,rank,gain_scgpt"
        assert len(lines) == 2
        assert lines[1].split(",")[1] == "1"
        summary = dict(line.split("=", 1)
                       for line in (out / "lodo_summary.txt").read_text().splitlines())
        assert summary["baseline"] == "raw_expression"
        assert summary["folds"] == "1"

    def test_requires_a_non_baseline_variant(self, fixture_dir, tmp_path, capsys):
        config = write_config(tmp_path / "lodo.ini", fixture_dir["files"],
                              fixture_dir["bench"].n_max_atoms)
        config.write_text(config.read_text().replace("variants = scgpt", "variants = raw"))
        assert cli.main(["lodo", "--config", str(config),
                         "--out", str(tmp_path / "o")]) == 2
        assert "non-baseline" in capsys.readouterr().err


class TestReport:
    def make_run(self, path, name, pccs):
        path.mkdir(parents=True)
        write_history_csv(path / "history.csv", name, [
            EpochRecord(epoch=i + 1, train_loss=1.0, val_pcc=p) for i, p in enumerate(pccs)])

    def test_merges_histories_with_stopped_markers(self, tmp_path):
        self.make_run(tmp_path / "run_a", "scgpt", list(np.linspace(0.8, 0.92, 20)))
        self.make_run(tmp_path / "run_b", "baseline", list(np.linspace(0.7, 0.8, 17)))
        out = tmp_path / "report"
        assert cli.main(["report", str(tmp_path / "run_a"), str(tmp_path / "run_b"),
                         "--out", str(out)]) == 0
        lines = (out / "stability.csv").read_text().splitlines()
        assert lines[0] == "epoch,val_pcc_baseline,val_pcc_scgpt"
        assert len(lines) == 21
        assert lines[18].split(",")[1] == "stopped"  # epoch 18, baseline stopped at 17
        assert lines[17].split(",")[1] != "stopped"

    def test_single_run_report_equals_history(self, tmp_path):
        self.make_run(tmp_path / "only", "m", [0.5, 0.6, 0.55])
        out = tmp_path / "report"
        assert cli.main(["report", str(tmp_path / "only"), "--out", str(out)]) == 0
        lines = (out / "stability.csv").read_text().splitlines()
        assert [ln.split(",")[1] for ln in lines[1:]] == ["0.5", "0.6", "0.55"]

    def test_missing_history_exits_5(self, tmp_path, capsys):
        (tmp_path / "empty_run").mkdir()
        assert cli.main(["report", str(tmp_path / "empty_run"),
                         "--out", str(tmp_path / "o")]) == 5
        assert "history.csv" in capsys.readouterr().err

    def test_disjoint_epoch_ranges_exit_5(self, tmp_path, capsys):
        self.make_run(tmp_path / "a", "m1", [0.5, 0.6])
        run_b = tmp_path / "b"
        run_b.mkdir()
        write_history_csv(run_b / "history.csv", "m2", [
            EpochRecord(epoch=e, train_loss=1.0, val_pcc=0.5) for e in (10, 11)])
        assert cli.main(["report", str(tmp_path / "a"), str(run_b),
                         "--out", str(tmp_path / "o")]) == 5
        assert "disjoint" in capsys.readouterr().err
