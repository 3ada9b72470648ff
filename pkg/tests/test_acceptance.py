"""Acceptance suite: one test per criterion, each at its stated tolerance.

Run with `pytest -s tests/test_acceptance.py` to see one pass/fail line per
criterion. Constants marked REGRESSION were pinned from the first oracle
run (master seed 0) and guard against behavioral drift.
"""

import functools
import json
import math
import time

import numpy as np
import pytest

from gdec import pdm, traces
from gdec.cli import main as cli_main
from gdec.decoding import DecoderConfig, decode, m3id_adjust, select_greedy
from gdec.mock import MockScenario, open_mock_session
from gdec.preference import DpoInputs, dpo_loss
from gdec.simulator import SimSpec, run_experiment

from conftest import make_frame, onehot, synthetic_trace

M3ID = lambda **kw: DecoderConfig(kind="m3id", **kw)

# REGRESSION constants pinned from the first oracle run (master seed 0).
DILUTION_GREEDY_RATE = 0.24394021528692017
DILUTION_M3ID_RATE = 0.0
DILUTION_RATE_RATIO = 0.0


def criterion(name, budget_s):
    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            start = time.monotonic()
            try:
                fn(*args, **kwargs)
            except BaseException:
                print(f"ACCEPTANCE {name}: FAIL")
                raise
            elapsed = time.monotonic() - start
            assert elapsed < budget_s, f"{name} took {elapsed:.1f}s, budget {budget_s}s"
            print(f"ACCEPTANCE {name}: PASS ({elapsed:.2f}s)")
        return wrapper
    return deco


@criterion("m3id-identity-suite", budget_s=1.0)
def test_m3id_identity_suite():
    rng = np.random.default_rng(424242)

    # l_c = l_u implies adjusted == l_c exactly.
    for _ in range(10):
        w = rng.random(8) + 1e-3
        p = (w / w.sum()).tolist()
        frame = make_frame(p, p)
        assert np.array_equal(m3id_adjust(frame, 33, M3ID(alpha=1.0)), frame.conditioned)

    # t = 0 with t0 = 0 implies adjusted == l_c exactly.
    frame = make_frame([0.5, 0.3, 0.2], [0.6, 0.2, 0.2])
    assert np.array_equal(m3id_adjust(frame, 0, M3ID(alpha=1.0, t0=0)), frame.conditioned)

    # alpha = 0 disables the correction: m3id trace == greedy trace on 50
    # randomized mock frames.
    def random_rows(n):
        rows = []
        for _ in range(n):
            w = rng.random(8)
            w[:2] = 1e-9  # keep bos/eos out of the argmax
            rows.append((w / w.sum()).tolist())
        return rows

    scenario = MockScenario.fixed_table(random_rows(50), random_rows(50))
    greedy = decode(open_mock_session(0, 8, scenario), DecoderConfig(kind="greedy", max_tokens=50))
    gated_off = decode(open_mock_session(0, 8, scenario), M3ID(alpha=0.0, max_tokens=50))
    assert len(greedy.steps) == 50
    assert gated_off.steps == greedy.steps
    assert gated_off.terminated_by == greedy.terminated_by


@criterion("worked-equation-example", budget_s=1.0)
def test_worked_equation_example():
    lc = [0.5, 0.3, 0.2]
    lu = [0.6, 0.2, 0.2]
    frame = make_frame(lc, lu)
    adjusted = m3id_adjust(frame, t=50, cfg=M3ID(alpha=0.6, lam=0.02, t0=0))
    # Independent evaluation: gamma = e^-1, multiplier (1-gamma)/gamma = e-1.
    kappa = math.e - 1.0
    expected = [math.log(c) + kappa * (math.log(c) - math.log(u)) for c, u in zip(lc, lu)]
    for got, want in zip(adjusted, expected):
        assert abs(got - want) < 1e-9
    assert select_greedy(frame.conditioned) == 0
    assert select_greedy(adjusted) == 1


@criterion("distance-suite", budget_s=5.0)
def test_distance_suite():
    rng = np.random.default_rng(7)
    for _ in range(10_000):
        p = rng.dirichlet(np.full(8, 0.6))
        q = rng.dirichlet(np.full(8, 0.6))
        h = pdm.distance(p, q, "hellinger")
        tv = pdm.distance(p, q, "total_variation")
        assert abs(h - pdm.distance(q, p, "hellinger")) <= 1e-12
        assert abs(tv - pdm.distance(q, p, "total_variation")) <= 1e-12
        assert 0.0 <= h <= 1.0
        assert 0.0 <= tv <= 1.0
    p = rng.dirichlet(np.ones(6))
    assert pdm.distance(p, p, "hellinger") == 0.0
    assert pdm.distance([1.0, 0.0], [0.0, 1.0], "hellinger") == 1.0


@criterion("decay-estimator", budget_s=30.0)
def test_decay_estimator():
    entries = tuple((t, 0.8 * math.exp(-0.02 * t)) for t in range(100))
    fit = pdm.estimate_decay_rate(pdm.PdmSeries(entries=entries, kind="hellinger"))
    assert abs(fit.lambda_hat - 0.02) < 1e-9
    assert abs(fit.r_squared - 1.0) < 1e-12

    spec = SimSpec(vocab_size=64, lambda_star=0.02, horizon=200, noise_sigma=0.01)
    report = run_experiment(spec, [DecoderConfig(kind="greedy")], n_runs=100, seed=0)
    series = pdm.PdmSeries(
        entries=tuple(enumerate(report.arm("greedy").mean_pdm_h)), kind="hellinger"
    )
    noisy = pdm.estimate_decay_rate(series)
    assert 0.018 <= noisy.lambda_hat <= 0.022


@criterion("oracle-recovery", budget_s=30.0)
def test_oracle_recovery():
    spec = SimSpec(vocab_size=64, lambda_star=0.02, horizon=201, noise_sigma=0.0)
    cfg = M3ID(alpha=1.0, lam=0.02, diff_clamp=math.inf, coef_cap=math.inf)
    report = run_experiment(spec, [cfg], n_runs=1, seed=0)
    arm = report.arm("m3id")
    for t in range(1, 201):
        assert arm.mean_kl_adjusted[t] < arm.mean_kl_conditioned[t], f"t={t}"


@criterion("dilution-and-mitigation", budget_s=120.0)
def test_dilution_and_mitigation():
    spec = SimSpec(vocab_size=64, lambda_star=0.02, horizon=200, noise_sigma=0.0)
    report = run_experiment(
        spec,
        [DecoderConfig(kind="greedy"), M3ID(alpha=0.3, lam=0.02)],
        n_runs=100,
        seed=0,
    )
    greedy, m3id = report.arm("greedy"), report.arm("m3id")

    # (a) the context influence decays under plain decoding
    early_pdm = float(np.mean(greedy.mean_pdm_h[:51]))
    late_pdm = float(np.mean(greedy.mean_pdm_h[150:201]))
    assert late_pdm < early_pdm

    # (b) hallucinations concentrate far from the context
    first_quartile = float(np.mean(greedy.halluc_counts[:50]))
    last_quartile = float(np.mean(greedy.halluc_counts[150:]))
    assert last_quartile > first_quartile

    # (c) the grounded decoder strictly reduces hallucinations; REGRESSION
    assert sum(m3id.object_counts) > 0
    assert m3id.hallucination_rate < greedy.hallucination_rate
    assert greedy.hallucination_rate == pytest.approx(DILUTION_GREEDY_RATE, abs=1e-9)
    assert m3id.hallucination_rate == pytest.approx(DILUTION_M3ID_RATE, abs=1e-9)
    ratio = m3id.hallucination_rate / greedy.hallucination_rate
    assert ratio == pytest.approx(DILUTION_RATE_RATIO, abs=1e-9)


@criterion("chair-cover-pope-hand-counts", budget_s=1.0)
def test_chair_cover_pope_hand_counts():
    from gdec.metrics import (
        AnnotationSet,
        CaptionRecord,
        Lexicon,
        PopeAnswer,
        chair,
        compare_runs,
        pope_score,
    )

    lexicon = Lexicon.from_mapping({"dog": [], "cat": [], "frisbee": []})
    annotations = AnnotationSet.from_mapping({"img1": ["dog"], "img2": ["cat"]}, lexicon)
    captions = [
        CaptionRecord.from_text("img1", "A dog with a frisbee.", lexicon),
        CaptionRecord.from_text("img2", "A cat.", lexicon),
    ]
    report = chair(captions, annotations, mode="unique")
    assert report.chair_i == 1 / 3
    assert report.chair_s == 1 / 2
    assert report.cover == 1.0

    answers = [
        PopeAnswer(question_id=str(i), split="random", gold=g, text=t)
        for i, (g, t) in enumerate(zip(["yes", "no", "no", "yes"], ["yes", "yes", "no", "yes"]))
    ]
    pope = pope_score(answers)
    assert pope.overall.accuracy == 0.75
    assert pope.overall.yes_rate == 0.75

    table = compare_runs(
        {"a": False, "b": True, "c": True, "d": False},
        {"a": False, "b": False, "c": True, "d": False},
    )
    assert (
        table.both_correct,
        table.base_only_correct,
        table.treated_only_correct,
        table.both_incorrect,
    ) == (0.5, 0.0, 0.25, 0.25)


@criterion("dpo-suite", budget_s=5.0)
def test_dpo_suite():
    loss, _ = dpo_loss(
        DpoInputs(logp_theta_w=-2.0, logp_ref_w=-2.0, logp_theta_l=-7.0, logp_ref_l=-7.0)
    )
    assert abs(loss - math.log(2.0)) < 1e-12

    loss, _ = dpo_loss(
        DpoInputs(logp_theta_w=4.0, logp_ref_w=-6.0, logp_theta_l=0.0, logp_ref_l=0.0, beta=0.1)
    )
    assert abs(loss - 0.313262) < 1e-6

    rng = np.random.default_rng(1234)
    h = 1e-6

    def loss_at(v, beta):
        return dpo_loss(
            DpoInputs(
                logp_theta_w=v[0], logp_ref_w=v[1], logp_theta_l=v[2], logp_ref_l=v[3],
                beta=beta,
            )
        )[0]

    for _ in range(100):
        v = rng.uniform(-1.5, 1.5, size=4)
        beta = rng.uniform(0.1, 2.0)
        _, grad = dpo_loss(
            DpoInputs(
                logp_theta_w=v[0], logp_ref_w=v[1], logp_theta_l=v[2], logp_ref_l=v[3],
                beta=beta,
            )
        )
        analytic = [grad.logp_theta_w, grad.logp_ref_w, grad.logp_theta_l, grad.logp_ref_l]
        for i in range(4):
            hi = v.copy(); hi[i] += h
            lo = v.copy(); lo[i] -= h
            fd = (loss_at(hi, beta) - loss_at(lo, beta)) / (2 * h)
            assert abs(fd - analytic[i]) / abs(analytic[i]) < 1e-6


@criterion("reproducibility", budget_s=60.0)
def test_reproducibility(tmp_path):
    def rerun_identical(argv, out):
        assert cli_main([str(a) for a in argv]) == 0
        first = out.read_bytes()
        assert cli_main([str(a) for a in argv]) == 0
        assert out.read_bytes() == first

    trace_out = tmp_path / "run.trace.jsonl"
    decode_cfg = tmp_path / "decode.json"
    decode_cfg.write_text(json.dumps(
        {"mock": {"vocab_size": 32, "scenario": {"kind": "fading", "lambda_star": 0.02}}}
    ))
    rerun_identical(
        ["decode", "--config", decode_cfg, "--decoder", "m3id", "--max-tokens", "32",
         "--seed", "9", "--out", trace_out],
        trace_out,
    )

    sim_cfg = tmp_path / "sim.json"
    sim_cfg.write_text(json.dumps({"sim": {"vocab_size": 32, "horizon": 16}, "n_runs": 3}))
    sim_out = tmp_path / "report.json"
    rerun_identical(["simulate", "--config", sim_cfg, "--out", sim_out], sim_out)

    prefs_cfg = tmp_path / "prefs.json"
    prefs_cfg.write_text(json.dumps({
        "vocab_size": 8,
        "scenario": {
            "kind": "fixed_table",
            "conditioned": [onehot(8, 5), onehot(8, 3), onehot(8, 1)],
            "unconditioned": [onehot(8, 7), onehot(8, 7), onehot(8, 6), onehot(8, 1)],
        },
        "terminators": [3],
        "n_sessions": 2,
        "preferred": {"kind": "m3id", "max_tokens": 8},
        "rejected": {"kind": "greedy", "max_tokens": 8},
    }))
    pairs_out = tmp_path / "pairs.jsonl"
    rerun_identical(["gen-prefs", "--config", prefs_cfg, "--out", pairs_out], pairs_out)

    series_out = tmp_path / "series.csv"
    rerun_identical(["pdm-trace", trace_out, "--out", series_out], series_out)

    fit_out = tmp_path / "fit.json"
    exp_trace = tmp_path / "exp.trace.jsonl"
    traces.write_trace(
        synthetic_trace([0.8 * math.exp(-0.02 * t) for t in range(64)]), exp_trace
    )
    rerun_identical(["estimate-lambda", exp_trace, "--out", fit_out], fit_out)
