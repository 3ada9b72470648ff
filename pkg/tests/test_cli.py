import json
import math
from pathlib import Path


from gdec import traces
from gdec.cli import main

from conftest import onehot, synthetic_trace


def run(argv):
    return main([str(a) for a in argv])


def write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj))
    return path


# ------------------------------------------------------------------- decode

def test_decode_mock_uniform(tmp_path, capsys):
    out = tmp_path / "run.trace.jsonl"
    code = run(["decode", "--decoder", "greedy", "--max-tokens", "4", "--out", out])
    assert code == 0
    lines = out.read_text().strip().splitlines()
    assert len(lines) == 5  # header + 4 steps
    header = json.loads(lines[0])
    assert header["tool_version"]
    assert header["master_seed"] == 0
    assert "4 steps" in capsys.readouterr().out


def test_decode_reruns_byte_identical(tmp_path):
    out = tmp_path / "run.trace.jsonl"
    args = ["decode", "--decoder", "m3id", "--max-tokens", "6", "--seed", "5"]
    cfg = write_json(
        tmp_path / "cfg.json",
        {"mock": {"vocab_size": 32, "scenario": {"kind": "fading", "lambda_star": 0.02}}},
    )
    assert run(args + ["--config", cfg, "--out", out]) == 0
    first = out.read_bytes()
    assert run(args + ["--config", cfg, "--out", out]) == 0
    assert out.read_bytes() == first


def test_decode_stamps_default_hyperparameters(tmp_path):
    out = tmp_path / "m.jsonl"
    assert run(["decode", "--decoder", "m3id", "--max-tokens", "2", "--out", out]) == 0
    header = json.loads(out.read_text().splitlines()[0])
    assert header["config"]["alpha"] == 0.3
    assert header["config"]["lambda"] == 0.02


def test_decode_unknown_config_key_fails(tmp_path):
    cfg = write_json(tmp_path / "cfg.json", {"decoderr": {}})
    assert run(["decode", "--config", cfg, "--out", tmp_path / "x"]) == 1


def test_decode_unreachable_bridge_exits_2(tmp_path):
    code = run(
        ["decode", "--source", "bridge", "--endpoint", "stdio:/no/such/bridge-bin",
         "--out", tmp_path / "x"]
    )
    assert code == 2


# --------------------------------------------------------------- eval-chair

CHAIR_LEXICON = {"dog": [], "cat": [], "frisbee": []}


def chair_files(tmp_path, caption_rows):
    lex = write_json(tmp_path / "lexicon.json", CHAIR_LEXICON)
    ann = write_json(tmp_path / "ann.json", {"img1": ["dog"], "img2": ["cat"]})
    caps = tmp_path / "captions.jsonl"
    caps.write_text("".join(json.dumps(r) + "\n" for r in caption_rows))
    return lex, ann, caps


def test_eval_chair_toy_corpus(tmp_path, capsys):
    lex, ann, caps = chair_files(
        tmp_path,
        [
            {"image_id": "img1", "text": "A dog with a frisbee."},
            {"image_id": "img2", "text": "A cat."},
        ],
    )
    cfg = write_json(
        tmp_path / "cfg.json",
        {"captions": str(caps), "annotations": str(ann), "lexicon": str(lex)},
    )
    out = tmp_path / "report.json"
    assert run(["eval-chair", "--config", cfg, "--out", out]) == 0
    report = json.loads(out.read_text())["report"]
    assert report["chair_i"] == 1 / 3
    assert report["chair_s"] == 1 / 2
    assert report["cover"] == 1.0


def test_eval_chair_empty_corpus(tmp_path):
    lex, ann, caps = chair_files(tmp_path, [])
    cfg = write_json(
        tmp_path / "cfg.json",
        {"captions": str(caps), "annotations": str(ann), "lexicon": str(lex)},
    )
    out = tmp_path / "report.json"
    assert run(["eval-chair", "--config", cfg, "--out", out]) == 0
    report = json.loads(out.read_text())["report"]
    assert report["counts"]["captions"] == 0


def test_eval_chair_missing_annotation_exits_3(tmp_path, capsys):
    lex, ann, caps = chair_files(tmp_path, [{"image_id": "ghost", "text": "a dog"}])
    cfg = write_json(
        tmp_path / "cfg.json",
        {"captions": str(caps), "annotations": str(ann), "lexicon": str(lex)},
    )
    assert run(["eval-chair", "--config", cfg, "--out", tmp_path / "r.json"]) == 3
    assert "ghost" in capsys.readouterr().err


# ---------------------------------------------------------------- eval-pope

def test_eval_pope_toy_set(tmp_path):
    questions = tmp_path / "q.jsonl"
    questions.write_text(
        "".join(
            json.dumps({"id": str(i), "split": "random", "object": "dog", "gold": g}) + "\n"
            for i, g in enumerate(["yes", "no", "no", "yes"])
        )
    )
    answers = tmp_path / "a.jsonl"
    answers.write_text(
        "".join(
            json.dumps({"id": str(i), "text": t}) + "\n"
            for i, t in enumerate(["yes", "yes", "no", "yes"])
        )
    )
    cfg = write_json(tmp_path / "cfg.json", {"questions": str(questions), "answers": str(answers)})
    out = tmp_path / "pope.json"
    assert run(["eval-pope", "--config", cfg, "--out", out]) == 0
    report = json.loads(out.read_text())["report"]
    assert report["overall"]["accuracy"] == 0.75
    assert report["overall"]["yes_rate"] == 0.75


# ------------------------------------------------- pdm-trace / estimate-lambda

def exponential_trace_file(tmp_path, lam=0.02, n=100, name="exp.trace.jsonl"):
    values = [0.8 * math.exp(-lam * t) for t in range(n)]
    path = tmp_path / name
    traces.write_trace(synthetic_trace(values), path)
    return path


def test_pdm_trace_single_trace_equals_its_values(tmp_path):
    trace_path = exponential_trace_file(tmp_path, n=10)
    out = tmp_path / "series.csv"
    assert run(["pdm-trace", trace_path, "--out", out]) == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0].startswith("# {")
    assert lines[1] == "t,value,kind,n"
    assert len(lines) == 2 + 10
    first = lines[2].split(",")
    assert first[0] == "0" and float(first[1]) == 0.8 and first[3] == "1"


def test_pdm_trace_rank_kind(tmp_path):
    trace_path = exponential_trace_file(tmp_path, n=10)
    out = tmp_path / "ranks.csv"
    assert run(["pdm-trace", trace_path, "--kind", "rank", "--out", out]) == 0
    lines = out.read_text().strip().splitlines()
    assert lines[2].endswith(",rank,1")


def test_estimate_lambda_exact_exponential(tmp_path, capsys):
    trace_path = exponential_trace_file(tmp_path)
    out = tmp_path / "fit.json"
    assert run(["estimate-lambda", trace_path, "--out", out]) == 0
    fit = json.loads(out.read_text())["fit"]
    assert abs(fit["lambda_hat"] - 0.02) < 1e-9
    assert abs(fit["r_squared"] - 1.0) < 1e-12
    assert "lambda_hat=" in capsys.readouterr().out


def test_estimate_lambda_on_simulator_batch_recovers_rate(tmp_path):
    fading = {"mock": {"vocab_size": 64, "scenario": {"kind": "fading", "lambda_star": 0.02}}}
    cfg = write_json(tmp_path / "cfg.json", fading)
    trace_paths = []
    for seed in range(5):
        out = tmp_path / f"run{seed}.trace.jsonl"
        assert run(["decode", "--config", cfg, "--decoder", "greedy", "--seed", seed,
                    "--max-tokens", "200", "--out", out]) == 0
        trace_paths.append(out)
    fit_out = tmp_path / "fit.json"
    assert run(["estimate-lambda", *trace_paths, "--out", fit_out]) == 0
    fit = json.loads(fit_out.read_text())["fit"]
    assert 0.018 <= fit["lambda_hat"] <= 0.022  # within 10% of the true rate


def test_estimate_lambda_all_zero_exits_4(tmp_path):
    path = tmp_path / "zero.trace.jsonl"
    traces.write_trace(synthetic_trace([0.0] * 12), path)
    assert run(["estimate-lambda", path, "--out", tmp_path / "f.json"]) == 4


# ---------------------------------------------------------------- gen-prefs

def prefs_config(tmp_path, uncond_rows):
    cond = [onehot(8, 5), onehot(8, 3), onehot(8, 1)]
    return write_json(
        tmp_path / "prefs.json",
        {
            "vocab_size": 8,
            "scenario": {"kind": "fixed_table", "conditioned": cond, "unconditioned": uncond_rows},
            "preferred": {"kind": "m3id", "max_tokens": 8},
            "rejected": {"kind": "greedy", "max_tokens": 8},
            "terminators": [3],
            "n_sessions": 2,
        },
    )


def test_gen_prefs_divergent(tmp_path, capsys):
    cfg = prefs_config(tmp_path, [onehot(8, 7), onehot(8, 7), onehot(8, 6), onehot(8, 1)])
    out = tmp_path / "pairs.jsonl"
    assert run(["gen-prefs", "--config", cfg, "--out", out]) == 0
    lines = out.read_text().strip().splitlines()
    header = json.loads(lines[0])
    assert header["pairs"] == 2
    assert len(lines) == 3
    assert "2 pairs" in capsys.readouterr().out


def test_gen_prefs_degenerate_counts_drops(tmp_path, capsys):
    cfg = prefs_config(tmp_path, [onehot(8, 7), onehot(8, 7), onehot(8, 1)])
    out = tmp_path / "pairs.jsonl"
    assert run(["gen-prefs", "--config", cfg, "--out", out]) == 0
    header = json.loads(out.read_text().splitlines()[0])
    assert header["pairs"] == 0
    assert header["dropped_identical"] == 2
    assert "2 dropped identical" in capsys.readouterr().out


# ----------------------------------------------------------------- simulate

def test_simulate_writes_report_and_csv(tmp_path):
    cfg = write_json(
        tmp_path / "sim.json",
        {
            "sim": {"vocab_size": 32, "horizon": 10},
            "arms": [{"kind": "greedy"}, {"kind": "m3id", "alpha": 0.3, "lambda": 0.02}],
            "n_runs": 2,
        },
    )
    out = tmp_path / "report.json"
    csv_out = tmp_path / "series.csv"
    assert run(["simulate", "--config", cfg, "--out", out, "--csv-out", csv_out]) == 0
    report = json.loads(out.read_text())
    labels = [a["label"] for a in report["arms"]]
    assert labels == ["greedy", "m3id"]
    assert csv_out.read_text().splitlines()[1].startswith("arm,t,")


def test_simulate_rerun_byte_identical(tmp_path):
    cfg = write_json(tmp_path / "sim.json", {"sim": {"vocab_size": 16, "horizon": 5}, "n_runs": 2})
    out = tmp_path / "report.json"
    assert run(["simulate", "--config", cfg, "--out", out]) == 0
    first = out.read_bytes()
    assert run(["simulate", "--config", cfg, "--out", out]) == 0
    assert out.read_bytes() == first
    # the default arm set compares plain decoding against the grounded one
    labels = [a["label"] for a in json.loads(first)["arms"]]
    assert labels == ["greedy", "m3id"]


# -------------------------------------------------------------------- misc

def test_usage_error_exits_1():
    assert run(["decode", "--decoder", "quantum"]) == 1


def test_flag_overrides_config_file(tmp_path):
    cfg = write_json(tmp_path / "c.json", {"decoder": {"kind": "greedy", "alpha": 0.9}})
    out = tmp_path / "t.jsonl"
    assert run(["decode", "--config", cfg, "--alpha", "0.5", "--max-tokens", "2", "--out", out]) == 0
    header = json.loads(out.read_text().splitlines()[0])
    assert header["config"]["alpha"] == 0.5
