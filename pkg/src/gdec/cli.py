"""Command-line surface: decode, evaluate, measure, and simulate.

One optional JSON config file per invocation; flags override config fields
by dotted path (flags > file > defaults). Every artifact file begins with a
header carrying the tool version, the resolved config, and the master seed,
so re-running a mock/simulator command with the same inputs reproduces the
file byte for byte.

Exit codes: 0 ok, 2 protocol, 3 data, 4 degenerate input, 1 anything else.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import __version__, metrics, pdm, preference, simulator, traces
from .bridge_client import open_bridge_session
from .decoding import DecoderConfig, decode
from .errors import (
    ConfigError,
    DataError,
    DegenerateInputError,
    GdecError,
    ProtocolError,
)
from .mock import MockScenario, open_mock_session

logger = logging.getLogger("gdec.cli")

_LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


class _UsageError(GdecError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    return cfg


def _set_path(cfg: dict, dotted: str, value) -> None:
    node = cfg
    *parents, leaf = dotted.split(".")
    for key in parents:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ConfigError(f"config path {dotted!r} collides with a non-object")
    node[leaf] = value


def _apply_overrides(cfg: dict, args: argparse.Namespace, mapping: dict[str, str]) -> None:
    for attr, dotted in mapping.items():
        value = getattr(args, attr, None)
        if value is not None:
            _set_path(cfg, dotted, value)


def _check_keys(cfg: dict, allowed: set[str], where: str = "config") -> None:
    unknown = set(cfg) - allowed
    if unknown:
        raise ConfigError(f"unknown {where} keys: {sorted(unknown)}")


def _header(resolved: dict, seed: int) -> dict:
    return {"tool_version": __version__, "run_config": resolved, "master_seed": seed}


def _write_json_report(path: str, payload: dict) -> None:
    traces.write_text_atomic(path, _dumps(payload) + "\n")


def _open_session(cfg: dict):
    source = cfg.get("source", "mock")
    if source == "mock":
        mock_cfg = dict(cfg.get("mock", {}))
        _check_keys(mock_cfg, {"vocab_size", "scenario"}, "mock")
        scenario = MockScenario.from_dict(mock_cfg.get("scenario", {"kind": "uniform"}))
        return open_mock_session(
            seed=int(cfg.get("seed", 0)),
            vocab_size=int(mock_cfg.get("vocab_size", 16)),
            scenario=scenario,
        )
    if source == "bridge":
        bridge_cfg = dict(cfg.get("bridge", {}))
        _check_keys(bridge_cfg, {"endpoint", "prompt", "context"}, "bridge")
        endpoint = bridge_cfg.get("endpoint")
        if not endpoint:
            raise ConfigError("bridge source needs bridge.endpoint")
        return open_bridge_session(
            endpoint=endpoint,
            prompt=bridge_cfg.get("prompt", ""),
            context_ref=bridge_cfg.get("context", ""),
        )
    raise ConfigError(f"source must be mock or bridge, got {source!r}")


# ---------------------------------------------------------------------- decode

_DECODE_KEYS = {"seed", "source", "decoder", "mock", "bridge", "out"}


def cmd_decode(cfg: dict) -> int:
    _check_keys(cfg, _DECODE_KEYS)
    out = cfg.get("out", "out.trace.jsonl")
    seed = int(cfg.get("seed", 0))
    decoder = DecoderConfig.from_dict(cfg.get("decoder", {}))
    with _open_session(cfg) as session:
        trace = decode(session, decoder)
    traces.write_trace(trace, out, extra_header=_header(cfg, seed))
    print(f"wrote {out}: {len(trace.steps)} steps, terminated by {trace.terminated_by}")
    return 0


# ------------------------------------------------------------------ eval-chair

_CHAIR_KEYS = {"captions", "annotations", "lexicon", "mode", "out", "seed"}


def cmd_eval_chair(cfg: dict) -> int:
    _check_keys(cfg, _CHAIR_KEYS)
    for need in ("captions", "annotations", "lexicon"):
        if need not in cfg:
            raise ConfigError(f"eval-chair needs {need!r}")
    lexicon = metrics.load_lexicon(cfg["lexicon"])
    annotations = metrics.load_annotations(cfg["annotations"], lexicon)
    captions = metrics.load_captions(cfg["captions"], lexicon)
    report = metrics.chair(captions, annotations, mode=cfg.get("mode", "unique"))
    out = cfg.get("out", "chair_report.json")
    payload = _header(cfg, int(cfg.get("seed", 0)))
    payload["report"] = report.to_dict()
    _write_json_report(out, payload)
    print(
        f"wrote {out}: chair_i={report.chair_i:.6f} chair_s={report.chair_s:.6f} "
        f"cover={report.cover:.6f} ({report.captions} captions)"
    )
    return 0


# ------------------------------------------------------------------- eval-pope

_POPE_KEYS = {"questions", "answers", "out", "seed"}


def cmd_eval_pope(cfg: dict) -> int:
    _check_keys(cfg, _POPE_KEYS)
    for need in ("questions", "answers"):
        if need not in cfg:
            raise ConfigError(f"eval-pope needs {need!r}")
    answers = metrics.load_pope_answers(cfg["questions"], cfg["answers"])
    report = metrics.pope_score(answers)
    out = cfg.get("out", "pope_report.json")
    payload = _header(cfg, int(cfg.get("seed", 0)))
    payload["report"] = report.to_dict()
    _write_json_report(out, payload)
    print(
        f"wrote {out}: accuracy={report.overall.accuracy:.6f} "
        f"yes_rate={report.overall.yes_rate:.6f} ({report.overall.total} questions)"
    )
    return 0


# ------------------------------------------------------- pdm-trace / est-lambda

_SERIES_KEYS = {"traces", "kind", "out", "csv_out", "seed"}


def _load_series(cfg: dict) -> pdm.PdmSeries:
    paths = cfg.get("traces", [])
    if not paths:
        raise ConfigError("no trace files given")
    loaded = [traces.read_trace(p) for p in paths]
    return pdm.aggregate_traces(loaded, kind=cfg.get("kind", "hellinger"))


def cmd_pdm_trace(cfg: dict) -> int:
    _check_keys(cfg, _SERIES_KEYS)
    series = _load_series(cfg)
    out = cfg.get("out", "pdm_series.csv")
    body = "# " + _dumps(_header(cfg, int(cfg.get("seed", 0)))) + "\n"
    traces.write_text_atomic(out, body + pdm.series_to_csv(series))
    print(f"wrote {out}: {len(series.entries)} positions, kind={series.kind}")
    return 0


def cmd_estimate_lambda(cfg: dict) -> int:
    _check_keys(cfg, _SERIES_KEYS)
    series = _load_series(cfg)
    values = series.values()
    if not (values > 0.0).any():
        raise DegenerateInputError("every aggregated dependency value is zero")
    fit = pdm.estimate_decay_rate(series)
    out = cfg.get("out", "decay_fit.json")
    payload = _header(cfg, int(cfg.get("seed", 0)))
    payload["fit"] = {
        "lambda_hat": fit.lambda_hat,
        "intercept": fit.intercept,
        "r_squared": fit.r_squared,
        "points": len(series.entries),
        "kind": series.kind,
    }
    _write_json_report(out, payload)
    if cfg.get("csv_out"):
        body = "# " + _dumps(_header(cfg, int(cfg.get("seed", 0)))) + "\n"
        traces.write_text_atomic(cfg["csv_out"], body + pdm.series_to_csv(series))
    print(
        f"lambda_hat={fit.lambda_hat!r} intercept={fit.intercept!r} "
        f"r_squared={fit.r_squared!r}"
    )
    print(f"wrote {out}")
    return 0


# ------------------------------------------------------------------- gen-prefs

_PREFS_KEYS = {
    "seed", "vocab_size", "scenario", "session_seeds", "n_sessions",
    "preferred", "rejected", "terminators", "out",
}


def cmd_gen_prefs(cfg: dict) -> int:
    _check_keys(cfg, _PREFS_KEYS)
    if "terminators" not in cfg:
        raise ConfigError("gen-prefs needs 'terminators' (sentence-ending token ids)")
    seed = int(cfg.get("seed", 0))
    vocab_size = int(cfg.get("vocab_size", 16))
    scenario = MockScenario.from_dict(cfg.get("scenario", {"kind": "uniform"}))
    session_seeds = cfg.get("session_seeds")
    if session_seeds is None:
        session_seeds = [seed + i for i in range(int(cfg.get("n_sessions", 1)))]
    preferred = DecoderConfig.from_dict(cfg.get("preferred", {"kind": "m3id"}))
    rejected = DecoderConfig.from_dict(cfg.get("rejected", {"kind": "greedy"}))
    sessions = [
        (f"mock-{s}", open_mock_session(int(s), vocab_size, scenario))
        for s in session_seeds
    ]
    result = preference.build_pairs(
        sessions, preferred, rejected, [int(t) for t in cfg["terminators"]]
    )
    out = cfg.get("out", "pairs.jsonl")
    traces.write_text_atomic(out, preference.pairs_jsonl(result, _header(cfg, seed)))
    print(
        f"wrote {out}: {len(result.pairs)} pairs, "
        f"{result.dropped_identical} dropped identical, "
        f"{result.skipped_no_terminator} skipped without terminator"
    )
    return 0


# -------------------------------------------------------------------- simulate

_SIM_KEYS = {"sim", "arms", "n_runs", "seed", "out", "csv_out"}


def cmd_simulate(cfg: dict) -> int:
    _check_keys(cfg, _SIM_KEYS)
    spec = simulator.SimSpec.from_dict(cfg.get("sim", {}))
    arms_cfg = cfg.get("arms")
    if not arms_cfg:
        arms_cfg = [{"kind": "greedy"}, {"kind": "m3id"}]
    arms = [DecoderConfig.from_dict(a) for a in arms_cfg]
    seed = int(cfg.get("seed", 0))
    report = simulator.run_experiment(spec, arms, n_runs=int(cfg.get("n_runs", 1)), seed=seed)
    out = cfg.get("out", "experiment.json")
    traces.write_text_atomic(out, report.to_json(extra_header=_header(cfg, seed)))
    if cfg.get("csv_out"):
        body = "# " + _dumps(_header(cfg, seed)) + "\n"
        traces.write_text_atomic(cfg["csv_out"], body + report.series_csv())
    for arm in report.arms:
        print(
            f"{arm.label}: hallucination_rate={arm.hallucination_rate:.6f} "
            f"mean_pdm_h={float(np.mean(arm.mean_pdm_h)):.6f}"
        )
    print(f"wrote {out}")
    return 0


# ----------------------------------------------------------------------- main

_DECODER_OVERRIDES = {
    "decoder": "decoder.kind",
    "alpha": "decoder.alpha",
    "lam": "decoder.lambda",
    "t0": "decoder.t0",
    "mu": "decoder.mu",
    "tau": "decoder.tau",
    "xi": "decoder.xi",
    "psi": "decoder.psi",
    "temperature": "decoder.temperature",
    "max_tokens": "decoder.max_tokens",
}


def _add_decoder_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--decoder", choices=["greedy", "multinomial", "m3id", "pmi", "contrastive"])
    p.add_argument("--alpha", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--t0", type=int)
    p.add_argument("--mu", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--xi", type=float)
    p.add_argument("--psi", type=float)
    p.add_argument("--temperature", type=float)
    p.add_argument("--max-tokens", dest="max_tokens", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gdec", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"gdec {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", metavar="PATH")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", metavar="PATH")
        return p

    p = common(sub.add_parser("decode", help="generate one trace from a mock or bridge session"))
    _add_decoder_flags(p)
    p.add_argument("--source", choices=["mock", "bridge"])
    p.add_argument("--endpoint", metavar="SPEC")
    p.set_defaults(fn=cmd_decode, overrides={
        **_DECODER_OVERRIDES, "seed": "seed", "out": "out",
        "source": "source", "endpoint": "bridge.endpoint",
    })

    p = common(sub.add_parser("eval-chair", help="caption hallucination metrics"))
    p.set_defaults(fn=cmd_eval_chair, overrides={"seed": "seed", "out": "out"})

    p = common(sub.add_parser("eval-pope", help="binary object-probe scoring"))
    p.set_defaults(fn=cmd_eval_pope, overrides={"seed": "seed", "out": "out"})

    p = common(sub.add_parser("pdm-trace", help="aggregate per-position dependency series to CSV"))
    p.add_argument("trace_files", nargs="*", metavar="TRACE")
    p.add_argument("--kind", choices=["hellinger", "rank"])
    p.set_defaults(fn=cmd_pdm_trace, overrides={"seed": "seed", "out": "out", "kind": "kind"})

    p = common(sub.add_parser("estimate-lambda", help="fit a decay rate to the dependency series"))
    p.add_argument("trace_files", nargs="*", metavar="TRACE")
    p.add_argument("--kind", choices=["hellinger", "rank"])
    p.add_argument("--csv-out", dest="csv_out", metavar="PATH")
    p.set_defaults(fn=cmd_estimate_lambda, overrides={
        "seed": "seed", "out": "out", "kind": "kind", "csv_out": "csv_out",
    })

    p = common(sub.add_parser("gen-prefs", help="build preference pairs from mock sessions"))
    p.set_defaults(fn=cmd_gen_prefs, overrides={"seed": "seed", "out": "out"})

    p = common(sub.add_parser("simulate", help="run the fading-memory experiment"))
    p.add_argument("--n-runs", dest="n_runs", type=int)
    p.add_argument("--csv-out", dest="csv_out", metavar="PATH")
    p.set_defaults(fn=cmd_simulate, overrides={
        "seed": "seed", "out": "out", "n_runs": "n_runs", "csv_out": "csv_out",
    })
    return parser


def _setup_logging() -> None:
    level = os.environ.get("GDEC_LOG", "error").lower()
    if level not in _LOG_LEVELS:
        level = "error"
    logging.basicConfig(level=_LOG_LEVELS[level], format="%(name)s %(levelname)s %(message)s")


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    try:
        args = build_parser().parse_args(argv)
        cfg = _load_config(args.config)
        _apply_overrides(cfg, args, args.overrides)
        files = getattr(args, "trace_files", None)
        if files:
            cfg.setdefault("traces", [])
            cfg["traces"] = list(cfg["traces"]) + list(files)
        return args.fn(cfg)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except ProtocolError as exc:
        print(f"protocol error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except DegenerateInputError as exc:
        print(f"degenerate input: {exc}", file=sys.stderr)
        return 4
    except GdecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # keep the exit-code contract even for bugs
        logger.exception("unhandled failure")
        print(f"internal error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
