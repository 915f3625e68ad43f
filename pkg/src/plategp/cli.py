"""Command-line driver: ``plategp {generate,learn,predict,experiment,mc-study}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from pydantic import ValidationError

from . import experiment as ex
from .inference import MleResult, ProposalTooWideError, read_trace
from .model import ExtendedHyperparams, IllConditionedError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MLE_NOT_CONVERGED = 3
EXIT_ILL_CONDITIONED = 4
EXIT_PROPOSAL_STALLED = 5

log = logging.getLogger("plategp")


def _config(args) -> ex.ExperimentConfig:
    cfg = ex.load_config(args.config) if args.config else ex.ExperimentConfig()
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.out is not None:
        updates["out"] = args.out
    if updates:
        cfg = ex.ExperimentConfig.model_validate({**cfg.model_dump(mode="json"), **updates})
    return cfg


def _mle_status(record: ex.RunRecord) -> int:
    if not record.mle["converged"]:
        log.warning("MLE flagged as not converged (gradient norm %.3g)", record.mle["gradient_norm"])
        return EXIT_MLE_NOT_CONVERGED
    return EXIT_OK


def cmd_generate(cfg, args) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    data = ex.generate_training_data(cfg)
    ex.write_dataset(out / "training_data.csv", data)
    ex.write_json(out / "config.json", cfg.model_dump(mode="json"))
    print(f"{len(data)} observations -> {out / 'training_data.csv'}")
    return EXIT_OK


def _domain(cfg):
    return (cfg.geometry.a, cfg.geometry.b)


def cmd_learn(cfg, args) -> int:
    data = ex.read_dataset(args.data, _domain(cfg)) if args.data else None
    outcome = ex.run_learning_case(cfg, data)
    ex.export_learning(outcome, cfg.out)
    r = outcome.record
    print(f"D_mle = {r.mle['params']['D']:.6g}  D_mcmc = {r.mcmc['mean']['D']:.6g}  (true {r.d_true:.6g})")
    return _mle_status(r)


def cmd_predict(cfg, args) -> int:
    run = Path(args.run or cfg.out)
    data = ex.read_dataset(run / "training_data.csv", _domain(cfg))
    trace = read_trace(run / "trace.csv")
    summary = json.loads((run / "run_summary.json").read_text())
    m = summary["mle"]
    mle = MleResult(ExtendedHyperparams.from_natural(**_mle_kwargs(m["params"])), m["log_likelihood"],
                    m["iterations"], m["converged"], m["gradient_norm"])
    outcome = ex.LearningOutcome(None, data, mle, trace)
    ex.predict_fields(cfg, outcome, Path(cfg.out) / "fields")
    print(f"fields -> {Path(cfg.out) / 'fields'}")
    return EXIT_OK


def _mle_kwargs(params: dict) -> dict:
    noise = {k[len("sigma2_"):]: v for k, v in params.items() if k.startswith("sigma2_")}
    return {"amplitude": params["A"], "length_x": params["l_x"], "length_y": params["l_y"],
            "rigidity": params["D"], "noise": noise}


def cmd_experiment(cfg, args) -> int:
    outcome, _ = ex.run_experiment(cfg)
    r = outcome.record
    print(f"D_mle = {r.mle['params']['D']:.6g}  D_mcmc = {r.mcmc['mean']['D']:.6g}  (true {r.d_true:.6g})")
    print(f"exports -> {cfg.out}")
    return _mle_status(r)


def cmd_mc_study(cfg, args) -> int:
    def progress(i, n):
        if i % 50 == 0 or i == n:
            log.info("replication %d / %d", i, n)

    stats = ex.monte_carlo_study(cfg, cfg.out, progress)
    for s in stats:
        print(f"SNR {s['snr']:>5g} {s['case']} {s['estimator']:<4} mean {s['mean']:.4f} "
              f"IQR {s['iqr']:.4f} (excluded {s['n_excluded']})")
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "learn": cmd_learn,
    "predict": cmd_predict,
    "experiment": cmd_experiment,
    "mc-study": cmd_mc_study,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="plategp", description="Physics-informed GP inference for thin plates.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML experiment configuration")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--out", help="output directory (overrides the config)")
        if name == "learn":
            p.add_argument("--data", help="training data file from 'generate' (default: regenerate)")
        if name == "predict":
            p.add_argument("--run", help="directory of a 'learn' run (default: --out)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _config(args)
    except (ValidationError, ValueError, OSError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](cfg, args)
    except IllConditionedError as exc:
        print(f"ill-conditioned covariance: {exc}", file=sys.stderr)
        return EXIT_ILL_CONDITIONED
    except ProposalTooWideError as exc:
        print(f"MCMC stalled: {exc}", file=sys.stderr)
        return EXIT_PROPOSAL_STALLED


if __name__ == "__main__":
    sys.exit(main())
