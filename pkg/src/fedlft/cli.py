"""Command-line interface.

    fedlft generate          synthetic tensor -> triple file
    fedlft split             triple file -> train/test triple files
    fedlft train-federated   federated training -> model file + CSV report
    fedlft train-centralized centralized baseline, same outputs
    fedlft evaluate          model + test file -> RMSE/MAE
    fedlft audit-comm        CSV report byte columns vs. cost formulas
    fedlft experiment        split + train repeated over seeded trials
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from typing import Optional, Sequence

import numpy as np

from . import io as tio
from .centralized import train_centralized
from .errors import FedLFTError
from .evaluation import ExperimentResult, TrialResult, run_experiment, trial_seed, write_report_csv
from .federation import client_bytes_per_round, make_transport, run_training, server_bytes_per_round
from .lft_math import Hyperparams
from .metrics import EvaluationSet, mae, rmse
from .synth import SynthSpec, generate
from .tensor_store import Shape, SplitSpec, split

log = logging.getLogger("fedlft")


def _add_hyperparams(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("hyperparameters")
    g.add_argument("--rank", type=int, default=20)
    g.add_argument("--eta", type=float, default=0.00038, help="learning rate")
    g.add_argument("--lambda", dest="lam", type=float, default=0.001, help="regularization")
    g.add_argument("--rounds", type=int, default=200, help="maximum training rounds")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--init-scale", type=float, default=0.004)
    g.add_argument("--local-epochs", type=int, default=1)
    g.add_argument("--sequential-d-update", action="store_true",
                   help="take grad_e/grad_t after the d_i step on each element")
    g.add_argument("--tol", type=float, default=1e-5, help="convergence threshold on train RMSE (0 disables)")
    g.add_argument("--patience", type=int, default=3)
    g.add_argument("--trials", type=int, default=5)


def _hyperparams(a) -> Hyperparams:
    return Hyperparams(rank=a.rank, learning_rate=a.eta, regularization=a.lam, max_rounds=a.rounds,
                       seed=a.seed, init_scale=a.init_scale, sequential_d_update=a.sequential_d_update,
                       local_epochs=a.local_epochs, convergence_tol=a.tol, convergence_patience=a.patience)


def _add_outputs(p: argparse.ArgumentParser) -> None:
    p.add_argument("train", help="training triple file")
    p.add_argument("--test", help="held-out triple file")
    p.add_argument("--one-based", action="store_true", help="input indices start at 1")
    p.add_argument("--model-out", default="model.bin")
    p.add_argument("--report", default="report.csv")
    p.add_argument("--export-text", help="also write the model as text")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedlft", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic low-rank tensor")
    p.add_argument("--shape", type=int, nargs=3, default=(50, 100, 16), metavar=("I", "J", "K"))
    p.add_argument("--true-rank", type=int, default=3)
    p.add_argument("--density", type=float, default=0.2)
    p.add_argument("--noise-std", type=float, default=0.0)
    p.add_argument("--clip", type=float, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("split", help="uniform per-entry train/test split")
    p.add_argument("input")
    p.add_argument("--fraction", type=float, required=True, help="training fraction, e.g. 0.05")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--one-based", action="store_true")
    p.add_argument("--train-out", required=True)
    p.add_argument("--test-out", required=True)

    p = sub.add_parser("train-federated", help="federated training")
    _add_outputs(p)
    _add_hyperparams(p)
    p.add_argument("--transport", choices=("in-process", "socket"), default="in-process")
    p.add_argument("--mode", choices=("snapshot", "interleaved"), default="snapshot")
    p.add_argument("--workers", type=int, default=1, help="client threads")

    p = sub.add_parser("train-centralized", help="centralized baseline")
    _add_outputs(p)
    _add_hyperparams(p)
    p.add_argument("--mode", choices=("snapshot", "fresh"), default="snapshot")

    p = sub.add_parser("evaluate", help="RMSE/MAE of a model on a test file")
    p.add_argument("model")
    p.add_argument("test")
    p.add_argument("--train", help="training file (for --exclude-cold-start and --clamp)")
    p.add_argument("--one-based", action="store_true")
    p.add_argument("--exclude-cold-start", action="store_true")
    p.add_argument("--clamp", action="store_true", help="clip predictions to [0, max training value]")

    p = sub.add_parser("audit-comm", help="check report byte columns against the cost formulas")
    p.add_argument("report")
    p.add_argument("train")
    p.add_argument("--rank", type=int, required=True)
    p.add_argument("--one-based", action="store_true")

    p = sub.add_parser("experiment", help="repeated split + train trials on one dataset")
    p.add_argument("dataset")
    p.add_argument("--fraction", type=float, default=0.05)
    p.add_argument("--trainer", choices=("federated", "centralized"), default="federated")
    p.add_argument("--mode", default=None)
    p.add_argument("--one-based", action="store_true")
    p.add_argument("--exclude-cold-start", action="store_true")
    p.add_argument("--report", default="experiment.csv")
    _add_hyperparams(p)
    return parser


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


def cmd_generate(a) -> None:
    spec = SynthSpec(Shape(*a.shape), a.true_rank, a.density, a.noise_std,
                     tuple(a.clip) if a.clip else None, a.seed)
    t = generate(spec)
    tio.save(t, a.output)
    _emit({"entries": len(t), "shape": list(spec.shape.as_tuple()), "output": a.output})


def cmd_split(a) -> None:
    t = tio.load(a.input, one_based=a.one_based)
    train, test = split(t, SplitSpec(a.fraction, a.seed))
    tio.save(train, a.train_out)
    tio.save(test, a.test_out)
    _emit({"train": len(train), "test": len(test)})


def _load_pair(a):
    train = tio.load(a.train, one_based=a.one_based)
    test = None
    if a.test:
        test = EvaluationSet(tio.load(a.test, shape=train.shape, one_based=a.one_based), train)
    return train, test


def _train(a, federated: bool) -> None:
    train, test = _load_pair(a)
    hp = _hyperparams(a)
    if a.trials < 1:
        raise FedLFTError("--trials must be >= 1")
    trials = []
    for n in range(a.trials):
        seed = trial_seed(hp.seed, n)
        thp = replace(hp, seed=seed)
        if federated:
            with make_transport(a.transport) as transport:
                f, reports = run_training(train, thp, transport, test=test, mode=a.mode, workers=a.workers)
        else:
            f, reports = train_centralized(train, thp, a.mode, test=test)
        score = (rmse(test, f), mae(test, f)) if test is not None else (float("nan"), float("nan"))
        trials.append(TrialResult(n, seed, *score, len(test) if test else 0, 0, reports, f))
        log.info("trial %d: %d rounds, test rmse %s", n, len(reports), score[0])

    result = ExperimentResult(trials)
    # the model file holds trial 0; the report covers every trial
    tio.save_model(trials[0].factors, a.model_out)
    if a.export_text:
        tio.export_text(trials[0].factors, a.export_text)
    with open(a.report, "w", newline="") as fh:
        write_report_csv(fh, result.rows())
    summary = {"trials": len(trials), "rounds": [len(t.reports) for t in trials],
               "model": a.model_out, "report": a.report}
    if test is not None:
        summary.update(mean_rmse=result.mean_rmse, mean_mae=result.mean_mae)
    _emit(summary)


def cmd_evaluate(a) -> None:
    f = tio.load_model(a.model)
    test = tio.load(a.test, shape=f.shape, one_based=a.one_based)
    train = tio.load(a.train, shape=f.shape, one_based=a.one_based) if a.train else None
    psi = EvaluationSet(test, train)
    out = {"n_test": len(psi)}
    if train is not None:
        cold = psi.cold_start_mask(train)
        out["n_cold_start"] = int(cold.sum())
        if a.exclude_cold_start:
            psi = psi.without(cold)
    elif a.exclude_cold_start:
        raise FedLFTError("--exclude-cold-start needs --train")
    clamp = None
    if a.clamp:
        if train is None:
            raise FedLFTError("--clamp needs --train")
        clamp = (0.0, float(train.values.max()))
    out.update(n_evaluated=len(psi), rmse=rmse(psi, f, clamp), mae=mae(psi, f, clamp))
    _emit(out)


def audit_report(rows, train, rank: int) -> list[str]:
    """Compare the byte columns of report rows with the cost formulas."""
    i, j, k = train.shape.as_tuple()
    sizes = np.bincount(train.users, minlength=i).tolist()
    expected_server = server_bytes_per_round(rank, i, j, k, sizes)
    expected_clients = sum(client_bytes_per_round(rank, j, k, n) for n in sizes)
    problems = []
    for row in rows:
        cb, sb = int(row["client_bytes"]), int(row["server_bytes"])
        if cb != expected_clients or sb != expected_server:
            problems.append(f"trial {row['trial']} round {row['round']}: client {cb} (expected "
                            f"{expected_clients}), server {sb} (expected {expected_server})")
    return problems


def cmd_audit_comm(a) -> int:
    import csv

    train = tio.load(a.train, one_based=a.one_based)
    with open(a.report, newline="") as fh:
        rows = list(csv.DictReader(fh))
    problems = audit_report(rows, train, a.rank)
    for p in problems:
        print(p, file=sys.stderr)
    _emit({"rows": len(rows), "mismatches": len(problems)})
    return 1 if problems else 0


def cmd_experiment(a) -> None:
    data = tio.load(a.dataset, one_based=a.one_based)
    result = run_experiment(data, _hyperparams(a), SplitSpec(a.fraction, a.seed), a.trials,
                            trainer=a.trainer, mode=a.mode, exclude_cold_start=a.exclude_cold_start)
    with open(a.report, "w", newline="") as fh:
        write_report_csv(fh, result.rows())
    _emit({"mean_rmse": result.mean_rmse, "mean_mae": result.mean_mae,
           "trial_rmse": [t.test_rmse for t in result.trials],
           "trial_mae": [t.test_mae for t in result.trials],
           "cold_start": [t.n_cold for t in result.trials]})


COMMANDS = {
    "generate": cmd_generate,
    "split": cmd_split,
    "train-federated": lambda a: _train(a, True),
    "train-centralized": lambda a: _train(a, False),
    "evaluate": cmd_evaluate,
    "audit-comm": cmd_audit_comm,
    "experiment": cmd_experiment,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args) or 0
    except (FedLFTError, OSError, ValueError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
