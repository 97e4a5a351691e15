"""Command-line behavior: exit codes, file products, output shapes."""

import pytest

from corpus import make_gold
from crowdseq import load_annotators, load_conll, load_crowd, save_config, save_conll
from crowdseq.cli import main
from crowdseq.crf import load_model


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One small end-to-end run shared by the read-only assertions."""
    root = tmp_path_factory.mktemp("pipeline")
    paths = {
        "gold": root / "gold.tsv",
        "crowd": root / "crowd.tsv",
        "mv": root / "mv.tsv",
        "ds": root / "ds.tsv",
        "saslc": root / "saslc.tsv",
        "model": root / "model.tsv",
        "annotators": root / "annotators.tsv",
        "history": root / "history.txt",
        "decoded": root / "decoded.tsv",
    }
    save_conll(paths["gold"], make_gold(10, seed=5))
    fast = [
        "--max-iters", "2", "--init-max-iter", "10", "--inner-max-iter", "4",
    ]
    assert main([
        "simulate", str(paths["gold"]), "--out", str(paths["crowd"]),
        "--seed", "5", "--annotators", "3",
        "--target-precision", "0.8", "--precision-spread", "0.05",
    ]) == 0
    assert main(["aggregate", str(paths["crowd"]), "--method", "mv", "--out", str(paths["mv"])]) == 0
    assert main(["aggregate", str(paths["crowd"]), "--method", "ds", "--out", str(paths["ds"])]) == 0
    assert main([
        "aggregate", str(paths["crowd"]), "--method", "saslc",
        "--out", str(paths["saslc"]), "--seed", "5", *fast,
    ]) == 0
    assert main([
        "train", str(paths["crowd"]), "--model-out", str(paths["model"]),
        "--annotators-out", str(paths["annotators"]),
        "--history-file", str(paths["history"]), "--seed", "5", *fast,
    ]) == 0
    assert main([
        "decode", str(paths["model"]), str(paths["gold"]), "--out", str(paths["decoded"]),
    ]) == 0
    return paths


class TestExitCodes:
    def test_no_subcommand_prints_usage(self, capsys):
        assert main([]) == 1
        assert "usage:" in capsys.readouterr().err

    def test_unknown_subcommand(self, capsys):
        assert main(["frobnicate"]) == 1
        assert "usage:" in capsys.readouterr().err

    def test_help_exits_zero(self, capsys):
        assert main(["--help"]) == 0
        assert main(["simulate", "--help"]) == 0
        capsys.readouterr()

    def test_stochastic_commands_demand_a_seed(self, tmp_path, capsys):
        gold = tmp_path / "gold.tsv"
        save_conll(gold, make_gold(2, seed=1))
        assert main(["simulate", str(gold), "--out", str(tmp_path / "c.tsv")]) == 1
        assert "--seed is required to simulate annotators" in capsys.readouterr().err

    def test_saslc_demands_a_seed(self, pipeline, capsys):
        code = main([
            "aggregate", str(pipeline["crowd"]), "--method", "saslc",
            "--out", "/tmp/unused.tsv",
        ])
        assert code == 1
        assert "--seed is required for --method saslc" in capsys.readouterr().err

    def test_train_demands_a_seed(self, pipeline, capsys):
        code = main([
            "train", str(pipeline["crowd"]), "--model-out", "/tmp/m.tsv",
            "--annotators-out", "/tmp/a.tsv",
        ])
        assert code == 1
        assert "--seed is required" in capsys.readouterr().err

    def test_missing_file_is_a_data_error(self, tmp_path, capsys):
        assert main(["evaluate", str(tmp_path / "no.tsv"), str(tmp_path / "no.tsv")]) == 2
        assert capsys.readouterr().err.startswith("error: ")

    def test_malformed_file_is_a_data_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.tsv"
        bad.write_text("Anna\tB-PER\tO\n", encoding="utf-8")
        assert main(["evaluate", str(bad), str(bad)]) == 2
        assert "expected 2 tab-separated fields" in capsys.readouterr().err

    def test_sequence_count_mismatch(self, tmp_path, capsys):
        a = tmp_path / "a.tsv"
        b = tmp_path / "b.tsv"
        a.write_text("x\tO\n", encoding="utf-8")
        b.write_text("x\tO\n\ny\tO\n", encoding="utf-8")
        assert main(["evaluate", str(a), str(b)]) == 2
        assert "sequence count mismatch" in capsys.readouterr().err

    def test_lattice_index_out_of_range(self, pipeline, capsys):
        assert main(["inspect-lattice", str(pipeline["crowd"]), "--instance", "99"]) == 2
        assert "out of range" in capsys.readouterr().err

    def test_unknown_report_filters(self, pipeline, capsys):
        assert main(["report-annotators", str(pipeline["annotators"]), "--context", "B-GPE"]) == 2
        assert "unknown context label" in capsys.readouterr().err
        assert main(["report-annotators", str(pipeline["annotators"]), "--truth", "nope"]) == 2
        capsys.readouterr()


class TestPipelineProducts:
    def test_simulate_reports_per_annotator_scores(self, pipeline, tmp_path, capsys):
        code = main([
            "simulate", str(pipeline["gold"]), "--out", str(tmp_path / "crowd.tsv"),
            "--seed", "5", "--annotators", "3",
            "--target-precision", "0.8", "--precision-spread", "0.05",
        ])
        assert code == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "annotator\tprecision\trecall\tf1"
        assert len(lines) == 4
        for row in lines[1:]:
            fields = row.split("\t")
            assert len(fields) == 4
            float(fields[1]), float(fields[2]), float(fields[3])

    def test_crowd_file_loads_with_the_declared_roster(self, pipeline):
        ds = load_crowd(pipeline["crowd"])
        assert ds.roster == ("ann1", "ann2", "ann3")
        assert len(ds.instances) == 10

    @pytest.mark.parametrize("key", ["mv", "ds", "saslc"])
    def test_aggregates_align_with_the_crowd_tokens(self, pipeline, key):
        crowd = load_crowd(pipeline["crowd"])
        out = load_conll(pipeline[key])
        assert len(out.instances) == len(crowd.instances)
        for a, b in zip(out.instances, crowd.instances):
            assert a.tokens == b.tokens
            assert a.gold is not None

    def test_model_and_annotators_files_load(self, pipeline):
        model = load_model(pipeline["model"])
        params, scheme = load_annotators(pipeline["annotators"])
        assert model.scheme.labels == scheme.labels
        assert params.roster == ("ann1", "ann2", "ann3")
        params.validate()

    def test_history_file_holds_one_float_per_round(self, pipeline):
        lines = pipeline["history"].read_text(encoding="utf-8").splitlines()
        values = [float(x) for x in lines]
        assert len(values) == 3  # initial value plus two iterations
        assert values[-1] >= values[0]

    def test_decode_produces_valid_sequences(self, pipeline):
        model = load_model(pipeline["model"])
        out = load_conll(pipeline["decoded"], model.scheme)
        gold = load_conll(pipeline["gold"])
        assert len(out.instances) == len(gold.instances)
        allowed = model.scheme.allowed_transitions
        init = model.scheme.initial_allowed
        for inst, src in zip(out.instances, gold.instances):
            assert inst.tokens == src.tokens
            assert init[inst.gold[0]]
            for a, b in zip(inst.gold, inst.gold[1:]):
                assert allowed[a, b]


class TestEvaluate:
    def test_identical_files_score_one(self, pipeline, capsys):
        assert main(["evaluate", str(pipeline["gold"]), str(pipeline["gold"])]) == 0
        out = capsys.readouterr().out.splitlines()
        assert out[0].startswith("precision  1.000000")
        assert out[1].startswith("recall     1.000000")
        assert out[2].startswith("f1         1.000000")
        machine = out[-1].split("\t")
        assert machine[:3] == ["1.0", "1.0", "1.0"]
        assert machine[4] == "0" and machine[5] == "0"

    def test_by_type_adds_a_table(self, pipeline, capsys):
        assert main(["evaluate", str(pipeline["mv"]), str(pipeline["gold"]), "--by-type"]) == 0
        out = capsys.readouterr().out.splitlines()
        header = [l for l in out if l == "type\tprecision\trecall\tf1\ttp\tfp\tfn"]
        assert len(header) == 1
        start = out.index(header[0]) + 1
        rows = [l for l in out[start:-1]]
        assert rows
        for row in rows:
            assert len(row.split("\t")) == 7

    def test_disjoint_label_sets_evaluate_cleanly(self, tmp_path, capsys):
        pred = tmp_path / "pred.tsv"
        gold = tmp_path / "gold.tsv"
        pred.write_text("Anna\tO\nParis\tO\n", encoding="utf-8")
        gold.write_text("Anna\tB-PER\nParis\tB-LOC\n", encoding="utf-8")
        assert main(["evaluate", str(pred), str(gold)]) == 0
        machine = capsys.readouterr().out.splitlines()[-1].split("\t")
        assert machine[:3] == ["0.0", "0.0", "0.0"]
        assert machine[3:] == ["0", "0", "2"]

    def test_entity_free_pair_evaluates_cleanly(self, tmp_path, capsys):
        pred = tmp_path / "pred.tsv"
        gold = tmp_path / "gold.tsv"
        pred.write_text("so\tO\nit\tO\ngoes\tO\n", encoding="utf-8")
        gold.write_text("so\tO\nit\tO\ngoes\tO\n", encoding="utf-8")
        assert main(["evaluate", str(pred), str(gold)]) == 0
        machine = capsys.readouterr().out.splitlines()[-1].split("\t")
        assert machine == ["0.0", "0.0", "0.0", "0", "0", "0"]


class TestInspectLattice:
    def test_table_and_footer_shape(self, pipeline, capsys):
        assert main(["inspect-lattice", str(pipeline["crowd"]), "--instance", "0"]) == 0
        out = capsys.readouterr().out.splitlines()
        assert out[0] == "position\ttoken\tcandidates\treachable"
        crowd = load_crowd(pipeline["crowd"])
        n = len(crowd.instances[0].tokens)
        for j in range(n):
            fields = out[1 + j].split("\t")
            assert fields[0] == str(j)
            assert fields[1] == crowd.instances[0].tokens[j]
            assert fields[2] and fields[3]
        footer = out[1 + n:]
        keys = [line.split("\t")[0] for line in footer]
        assert keys == ["unpruned", "valid", "enumerated", "capped", "widened"]
        assert footer[3].split("\t")[1] in ("true", "false")

    def test_cap_of_one_truncates_enumeration(self, pipeline, capsys):
        assert main([
            "inspect-lattice", str(pipeline["crowd"]), "--instance", "0",
            "--consistency-hi", "9", "--consistency-lo", "3", "--cap", "1",
        ]) == 0
        out = capsys.readouterr().out.splitlines()
        stats = dict(line.split("\t") for line in out if "\t" in line and not line[0].isdigit()
                     and not line.startswith("position"))
        assert stats["enumerated"] == "1"
        assert stats["capped"] == "true"


class TestReportAnnotators:
    def test_full_dump_covers_every_cell(self, pipeline, capsys):
        assert main(["report-annotators", str(pipeline["annotators"])]) == 0
        out = capsys.readouterr().out.splitlines()
        assert out[0] == "annotator\tcontext\ttruth\tassigned\tprobability"
        params, scheme = load_annotators(pipeline["annotators"])
        m = scheme.size
        assert len(out) - 1 == len(params.roster) * (m + 1) * m * m
        for row in out[1:]:
            float(row.split("\t")[4])

    def test_filters_narrow_the_rows(self, pipeline, capsys):
        assert main([
            "report-annotators", str(pipeline["annotators"]),
            "--table", "mention", "--annotator", "ann2",
            "--context", "<bos>", "--truth", "O",
        ]) == 0
        out = capsys.readouterr().out.splitlines()
        _, scheme = load_annotators(pipeline["annotators"])
        assert len(out) - 1 == scheme.size
        for row in out[1:]:
            fields = row.split("\t")
            assert fields[0] == "ann2"
            assert fields[1] == "<bos>"
            assert fields[2] == "O"


class TestDeterminismAndConfig:
    def test_simulate_is_byte_identical_under_one_seed(self, pipeline, tmp_path, capsys):
        a = tmp_path / "a.tsv"
        b = tmp_path / "b.tsv"
        for out in (a, b):
            assert main([
                "simulate", str(pipeline["gold"]), "--out", str(out),
                "--seed", "11", "--annotators", "2",
            ]) == 0
        capsys.readouterr()
        assert a.read_bytes() == b.read_bytes()

    def test_threads_flag_is_accepted_and_ignored(self, pipeline, tmp_path, capsys):
        a = tmp_path / "a.tsv"
        b = tmp_path / "b.tsv"
        assert main(["aggregate", str(pipeline["crowd"]), "--method", "mv", "--out", str(a)]) == 0
        assert main(["aggregate", str(pipeline["crowd"]), "--method", "mv",
                     "--out", str(b), "--threads", "8"]) == 0
        capsys.readouterr()
        assert a.read_bytes() == b.read_bytes()

    def test_config_file_supplies_defaults_and_flags_win(self, pipeline, tmp_path, capsys):
        cfg = tmp_path / "run.cfg"
        save_config(cfg, {"n_annotators": 2, "target_precision": 0.9, "precision_spread": 0.0})
        out = tmp_path / "from_config.tsv"
        assert main([
            "simulate", str(pipeline["gold"]), "--out", str(out),
            "--seed", "3", "--config", str(cfg),
        ]) == 0
        assert load_crowd(out).roster == ("ann1", "ann2")
        out2 = tmp_path / "flag_wins.tsv"
        assert main([
            "simulate", str(pipeline["gold"]), "--out", str(out2),
            "--seed", "3", "--config", str(cfg), "--annotators", "4",
        ]) == 0
        capsys.readouterr()
        assert load_crowd(out2).roster == ("ann1", "ann2", "ann3", "ann4")
