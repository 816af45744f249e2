"""Command-line entry point: ``defer-lab <mode> --config PATH [--seed N] [--out DIR]``.

Every JSON artifact embeds the resolved config and seed under ``config`` and
``seed``. Feeding that ``config`` object back through ``--config`` reproduces
the artifact byte for byte.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import MODES, RunConfig, parse_config
from .dataset import Dataset
from .errors import ConfigError, DatasetError, DeferLabError
from .io import load_dataset, read_json, write_dataset, write_histogram, write_json, write_truth
from .metrics import build_report
from .model import ScorerModel, TrainConfig, evaluate, init_model, train
from .oracle import sample_synthetic
from .verify import run_all, worker_threads

log = logging.getLogger("defer_lab")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2


def _envelope(cfg: RunConfig, **payload) -> dict:
    return {"config": cfg.resolved(), "seed": cfg.seed, **payload}


def _absolute_paths(cfg: RunConfig, base: Path) -> RunConfig:
    """Resolve file references relative to the config file so embedded configs rerun anywhere."""
    def fix(p):
        return None if p is None else str((base / p).resolve())

    update = {}
    if cfg.checkpoint is not None:
        update["checkpoint"] = fix(cfg.checkpoint)
    if cfg.data is not None and cfg.data.csv is not None:
        csv = cfg.data.csv.model_copy(update={"train": fix(cfg.data.csv.train),
                                              "test": fix(cfg.data.csv.test)})
        update["data"] = cfg.data.model_copy(update={"csv": csv})
    return cfg.model_copy(update=update) if update else cfg


class _Split:
    """A dataset plus, for synthetic draws, its ground truth."""

    def __init__(self, data: Dataset, name: str, sample=None):
        self.data = data
        self.name = name
        self.sample = sample


def _require_data(cfg: RunConfig):
    if cfg.data is None:
        raise ConfigError(f"data: required for mode {cfg.mode!r}")
    return cfg.data


def _train_split(cfg: RunConfig) -> _Split:
    data = _require_data(cfg)
    if data.synthetic is not None:
        sample = sample_synthetic(data.synthetic.to_spec())
        return _Split(sample.data, "train", sample)
    return _Split(load_dataset(data.csv.train, data.csv.k_classes, data.csv.n_experts), "train")


def _eval_split(cfg: RunConfig, train_split: _Split | None) -> _Split:
    data = _require_data(cfg)
    if data.synthetic is not None and data.n_test is not None:
        spec = data.synthetic.to_spec(n=data.n_test, seed=data.synthetic.seed + 1)
        sample = sample_synthetic(spec)
        return _Split(sample.data, "test", sample)
    if data.csv is not None and data.csv.test is not None:
        return _Split(load_dataset(data.csv.test, data.csv.k_classes, data.csv.n_experts), "test")
    return train_split if train_split is not None else _train_split(cfg)


def _train_model(cfg: RunConfig, split: _Split):
    data = cfg.data
    model = init_model(cfg.model.arch, split.data.feature_dim, data.n_classes, data.n_experts,
                       seed=cfg.seed, hidden=cfg.model.hidden)
    tc = TrainConfig(loss=cfg.loss, seed=cfg.seed, **cfg.train.model_dump())
    return train(model, split.data, tc)


def load_checkpoint(path) -> ScorerModel:
    doc = read_json(path)
    return ScorerModel.from_dict(doc.get("model", doc))


def run_train(cfg: RunConfig, out: Path) -> bool:
    split = _train_split(cfg)
    model, history = _train_model(cfg, split)
    write_json(out / "checkpoint.json", _envelope(cfg, model=model.to_dict()))
    write_json(out / "history.json", _envelope(cfg, history=history))
    log.info("final training loss %.6f after %d epochs", history[-1], len(history))
    return True


def run_evaluate(cfg: RunConfig, out: Path) -> bool:
    data = _require_data(cfg)
    train_split = None
    if cfg.checkpoint is not None:
        model = load_checkpoint(cfg.checkpoint)
        if model.n_classes != data.n_classes or model.n_experts != data.n_experts:
            raise ConfigError("checkpoint: model dimensions do not match the data section")
        if model.loss is not None and model.loss != cfg.loss.value:
            log.warning("checkpoint was trained with %s; evaluating with %s estimator",
                        model.loss, cfg.loss.value)
    else:
        train_split = _train_split(cfg)
        model, _ = _train_model(cfg, train_split)
    split = _eval_split(cfg, train_split)
    result = evaluate(model, split.data, cfg.loss)
    truth = None if split.sample is None else split.sample.expert_acc
    report = build_report(result.decisions, result.estimates, split.data.labels,
                          split.data.experts, cfg.budgets, cfg.ece_bins, truth, cfg.hist_bins)
    extra = {}
    if split.sample is not None:
        extra["bayes_risk"] = split.sample.bayes_risk
    write_json(out / "report.json", _envelope(cfg, split=split.name, n_samples=len(split.data),
                                              report=report.to_dict(), **extra))
    write_histogram(out / "histogram.csv", report.histogram)
    log.info("%s error %.4f coverage %.4f ece %.4f", split.name, report.error,
             report.coverage, report.ece)
    return True


def run_simulate(cfg: RunConfig, out: Path) -> bool:
    data = _require_data(cfg)
    if data.synthetic is None:
        raise ConfigError("data.synthetic: simulate needs a synthetic data source")
    spec = data.synthetic.to_spec()
    sample = sample_synthetic(spec)
    write_dataset(out / "dataset.csv", sample.data)
    write_truth(out / "truth.csv", sample.eta, sample.expert_acc)
    write_json(out / "bayes_risk.json", _envelope(cfg, n_samples=len(sample.data),
                                                  bayes_risk=sample.bayes_risk))
    log.info("simulated %d samples, bayes risk %.6f", len(sample.data), sample.bayes_risk)
    return True


def run_verify(cfg: RunConfig, out: Path) -> bool:
    results = run_all(cfg.seed, cfg.verify.model_dump(), threads=worker_threads())
    passed = all(r.passed for r in results)
    write_json(out / "verify.json", _envelope(cfg, passed=passed,
                                              checks=[r.to_dict() for r in results]))
    return passed


RUNNERS = {"train": run_train, "evaluate": run_evaluate,
           "simulate": run_simulate, "verify": run_verify}


def run(cfg: RunConfig) -> int:
    """Execute one configured run and return the process exit status."""
    if cfg.mode is None:
        raise ConfigError("mode: not set")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log.info("resolved config: %s", json.dumps(cfg.resolved(), sort_keys=True))
    log.info("seed: %d", cfg.seed)
    ok = RUNNERS[cfg.mode](cfg, out)
    return EXIT_OK if ok else EXIT_FAILURE


def _error_doc(err: BaseException) -> dict:
    doc = {"error": type(err).__name__, "message": str(err)}
    if isinstance(err, DatasetError) and err.row is not None:
        doc["row"] = err.row
    return doc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="defer-lab", description=__doc__.splitlines()[0])
    parser.add_argument("mode", choices=MODES)
    parser.add_argument("--config", required=True, help="JSON run config")
    parser.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    parser.add_argument("--out", default=None, help="output directory (overrides out_dir)")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = parse_config(args.config, mode=args.mode, seed=args.seed, out_dir=args.out)
        cfg = _absolute_paths(cfg, Path(args.config).resolve().parent)
        return run(cfg)
    except ConfigError as err:
        print(json.dumps(_error_doc(err)), file=sys.stderr)
        return EXIT_CONFIG
    except (DeferLabError, OSError, ValueError) as err:
        print(json.dumps(_error_doc(err)), file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
