import json

import pytest

from kgcodes.cli import main


def run_cli(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr().out.strip().splitlines()
    return code, json.loads(out[-1]) if out else None


def test_full_pipeline(tmp_path, capsys):
    prefix = str(tmp_path / "toy")

    code, stats = run_cli(capsys, "synth", "--seed", "7", "--n-super", "2",
                          "--n-sub", "2", "--per-leaf", "10", "--dim", "8",
                          "--splits", "0.8", "0.1", "0.1",
                          "--out-prefix", prefix)
    assert code == 0 and stats["entities"] == 40

    code, rep = run_cli(capsys, "stats", "--train-file", prefix + ".train.tsv",
                        "--valid-file", prefix + ".valid.tsv",
                        "--test-file", prefix + ".test.tsv")
    assert code == 0 and rep["entities"] == 40

    emb_out = str(tmp_path / "fused.bin")
    code, rep = run_cli(capsys, "embed", "--train-file", prefix + ".train.tsv",
                        "--valid-file", prefix + ".valid.tsv",
                        "--test-file", prefix + ".test.tsv",
                        "--dim", "8", "--steps", "50",
                        "--text-features", prefix + ".features.bin",
                        "--rho", "0.0", "--out", emb_out)
    assert code == 0 and rep["dim"] == 8

    tree_out = str(tmp_path / "tree.json")
    code, rep = run_cli(capsys, "tree", "--features", emb_out,
                        "--levels", "3", "--leaf-count", "4",
                        "--out", tree_out)
    assert code == 0 and rep["levels"] == 3

    ckdir = str(tmp_path / "ckpts")
    code, rep = run_cli(capsys, "train", "--features", emb_out,
                        "--tree", tree_out, "--steps", "4", "--eval-every", "2",
                        "--levels", "2", "--codebook-size", "4",
                        "--encoder-hidden", "16", "--tau", "0.5",
                        "--parent-recon", "2", "--recon-layers", "1",
                        "--recon-heads", "2", "--lambda-s", "0.05",
                        "--lr", "1e-3", "--checkpoint-dir", ckdir,
                        "--entropy-csv", str(tmp_path / "entropy.csv"))
    assert code == 0
    ckpt = rep["selected_checkpoint"]
    assert rep["best_entropy"] >= rep["final_entropy"] - 1e-12

    codes_out = str(tmp_path / "codes.txt")
    code, rep = run_cli(capsys, "encode", "--checkpoint", ckpt,
                        "--features", emb_out, "--out", codes_out)
    assert code == 0 and rep == {"entities": 40, "levels": 2}
    lines = open(codes_out).read().splitlines()
    assert len(lines) == 40 and all("\t<#" in l for l in lines)

    code, rep = run_cli(capsys, "graph", "--checkpoint", ckpt,
                        "--features", emb_out,
                        "--out", str(tmp_path / "layers.dot"),
                        "--json-out", str(tmp_path / "layers.json"))
    assert code == 0 and rep["nodes"] >= 2

    code, rep = run_cli(capsys, "quality", "--checkpoint", ckpt,
                        "--features", emb_out, "--tree", tree_out,
                        "--labels", prefix + ".labels.json")
    assert code == 0
    assert 0.0 <= rep["nmi_level0_vs_super"] <= 1.0

    code, rep = run_cli(capsys, "rerank", "--train-file", prefix + ".train.tsv",
                        "--valid-file", prefix + ".valid.tsv",
                        "--test-file", prefix + ".test.tsv",
                        "--entity-vectors", emb_out,
                        "--relation-vectors", emb_out + ".relations.bin",
                        "--k", "1,3,10")
    assert code == 0 and 0.0 <= rep["mrr"] <= 1.0 and "hits@10" in rep


def test_cli_error_exit_code(tmp_path, capsys):
    code = main(["stats", "--train-file", str(tmp_path / "missing.tsv")])
    assert code == 1
    assert "error:" in capsys.readouterr().err


def test_cli_requires_subcommand():
    with pytest.raises(SystemExit):
        main([])
