"""Stage pipeline for the training variants.

Each stage writes its outputs and then an empty ``<stage>.done`` marker.  A
rerun in the same directory reloads finished stages instead of recomputing
them, so an interrupted run can be resumed.
"""

from __future__ import annotations

import csv
import json
import logging
import platform
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .. import __version__
from .. import curriculum as cur
from .. import evaluate as ev
from .. import policy as pol
from .. import sft as sft_mod
from .. import synth
from ..grammar import Regime
from ..grpo import grpo_train, read_metrics_csv, write_metrics_csv
from ..policy import PolicyParams
from .config import ExperimentConfig, as_dict
from . import figures

log = logging.getLogger(__name__)

NO_PLAN = "none"


@dataclass(frozen=True)
class Variant:
    regime: Regime
    warm_start: bool
    plan: str
    grpo: bool = True


VARIANTS: dict[str, Variant] = {
    "a": Variant(Regime.DIRECT, False, cur.SHUFFLED),
    "b": Variant(Regime.STRUCTURED, False, cur.SHUFFLED),
    "c": Variant(Regime.UNSTRUCTURED, False, cur.SHUFFLED),
    "d": Variant(Regime.STRUCTURED, True, cur.SHUFFLED),
    "e": Variant(Regime.UNSTRUCTURED, True, cur.SHUFFLED),
    "f": Variant(Regime.STRUCTURED, True, cur.CURRICULUM),
    "g": Variant(Regime.UNSTRUCTURED, True, cur.CURRICULUM),
    "sft_a": Variant(Regime.STRUCTURED, True, NO_PLAN, grpo=False),
    "sft_b": Variant(Regime.UNSTRUCTURED, True, NO_PLAN, grpo=False),
}


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException) -> None:
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage


@dataclass
class RunArtifacts:
    run_dir: Path
    variant: str
    checkpoints: dict[str, Path] = field(default_factory=dict)
    metrics: dict[str, Path] = field(default_factory=dict)
    eval_report: Path | None = None
    manifest: Path | None = None
    report: ev.EvalReport | None = None


def _done(run_dir: Path, stage: str) -> Path:
    return run_dir / f"{stage}.done"


def _stage(run_dir: Path, stage: str, compute: Callable[[], object],
           load: Callable[[], object]) -> object:
    marker = _done(run_dir, stage)
    if marker.exists():
        log.info("stage %s already complete, reloading", stage)
        try:
            return load()
        except Exception as exc:
            raise StageError(stage, exc) from exc
    log.info("stage %s", stage)
    try:
        result = compute()
    except StageError:
        raise
    except Exception as exc:
        raise StageError(stage, exc) from exc
    marker.touch()
    return result


def build_base(cfg: ExperimentConfig) -> PolicyParams:
    frame = synth.shared_frame(cfg.dataset.d, cfg.seed)
    return pol.base_params(frame, cfg.seed, cfg.base)


def make_data(cfg: ExperimentConfig) -> synth.DatasetSplit:
    ds = cfg.dataset
    return synth.make_splits(ds.n_sft, ds.n_rl, ds.n_eval, d=ds.d, seed=cfg.seed,
                             zero_signal_frac=ds.zero_signal_frac,
                             prototype_spread=ds.prototype_spread)


def write_sft_metrics(history: list[float], path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "mean_loss"])
        for i, loss in enumerate(history):
            w.writerow([i, repr(float(loss))])


def teacher_records(questions, teachers) -> list[synth.Question]:
    out = []
    for q, t in zip(questions, teachers):
        rec = synth.Question.from_record(q.to_record())
        rec.extra["regime"] = t.regime.value
        rec.extra["trace"] = t.text
        out.append(rec)
    return out


def manifest_for(variant: str, cfg: ExperimentConfig) -> dict:
    return {
        "variant": variant,
        "seed": cfg.seed,
        "config_hash": cfg.hash(),
        "config": as_dict(cfg),
        "versions": {"cotgrpo": __version__, "numpy": np.__version__,
                     "python": platform.python_version()},
    }


def run_variant(variant: str, cfg: ExperimentConfig, out_dir: str | Path) -> RunArtifacts:
    """Run every stage the variant calls for, writing artifacts under ``out_dir``."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; valid: {', '.join(VARIANTS)}")
    recipe = VARIANTS[variant]
    cfg = cfg.resolved()
    run_dir = Path(out_dir)
    for sub in ("data", "checkpoints", "figures"):
        (run_dir / sub).mkdir(parents=True, exist_ok=True)
    (run_dir / "config.ini").write_text(cfg.to_ini(), encoding="utf-8")
    manifest = manifest_for(variant, cfg)
    manifest_path = run_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                             encoding="utf-8")
    art = RunArtifacts(run_dir, variant, manifest=manifest_path)
    data_dir, ckpt_dir = run_dir / "data", run_dir / "checkpoints"

    # -- data
    def compute_data():
        split = make_data(cfg)
        synth.save_jsonl(split.sft_questions, data_dir / "sft.jsonl")
        synth.save_jsonl(split.rl_questions, data_dir / "rl.jsonl")
        synth.save_jsonl(split.eval_questions, data_dir / "eval.jsonl")
        return split

    split = _stage(run_dir, "data", compute_data, lambda: synth.DatasetSplit(
        synth.load_jsonl(data_dir / "sft.jsonl"), synth.load_jsonl(data_dir / "rl.jsonl"),
        synth.load_jsonl(data_dir / "eval.jsonl")))

    # -- base policy
    def compute_base():
        base = build_base(cfg)
        pol.save_checkpoint(base, ckpt_dir / "base.npz")
        return base

    params = _stage(run_dir, "base", compute_base,
                    lambda: pol.load_checkpoint(ckpt_dir / "base.npz"))
    base_params = params
    art.checkpoints["base"] = ckpt_dir / "base.npz"

    # -- supervised warm start
    if recipe.warm_start:
        def compute_sft():
            teachers = sft_mod.teacher_set(split.sft_questions, recipe.regime, cfg.teacher,
                                           cfg.seed)
            synth.save_jsonl(teacher_records(split.sft_questions, teachers),
                             data_dir / "teacher.jsonl")
            qmap = synth.by_id(split.sft_questions)
            trained, history = sft_mod.sft_train(params, teachers, qmap, cfg.sft)
            write_sft_metrics(history, run_dir / "sft_metrics.csv")
            pol.save_checkpoint(trained, ckpt_dir / "sft.npz")
            return trained

        params = _stage(run_dir, "sft", compute_sft,
                        lambda: pol.load_checkpoint(ckpt_dir / "sft.npz"))
        art.checkpoints["sft"] = ckpt_dir / "sft.npz"
        art.metrics["sft"] = run_dir / "sft_metrics.csv"

    # -- pass rates, filtering, plan
    if recipe.grpo:
        def compute_rates():
            rates = cur.estimate_pass_rates(base_params, split.rl_questions,
                                            cfg.pass_rate.attempts, cfg.pass_rate.temperature,
                                            cfg.seed, cfg.grpo.max_len, workers=cfg.run.workers)
            scored = []
            for q, r in zip(split.rl_questions, rates):
                q2 = synth.Question.from_record(q.to_record())
                q2.pass_rate = r.rate
                scored.append(q2)
            synth.save_jsonl(scored, data_dir / "rl_scored.jsonl")
            return scored

        scored = _stage(run_dir, "pass_rate", compute_rates,
                        lambda: synth.load_jsonl(data_dir / "rl_scored.jsonl"))

        def compute_plan():
            rates = {q.id: q.pass_rate for q in scored}
            pool = cur.filter_zero_pass(scored, rates)
            if not pool:
                raise ValueError("every RL question has a zero pass rate")
            plan = (cur.order_by_difficulty(pool, rates) if recipe.plan == cur.CURRICULUM
                    else cur.shuffled_plan(pool, cfg.seed))
            cur.save_plan(plan, run_dir / "plan.txt")
            return plan

        plan = _stage(run_dir, "plan", compute_plan,
                      lambda: cur.load_plan(run_dir / "plan.txt"))

        def compute_grpo():
            trained, history = grpo_train(params, plan.ids, synth.by_id(scored), recipe.regime,
                                          cfg.grpo, cfg.reward)
            write_metrics_csv(history, run_dir / "grpo_metrics.csv")
            pol.save_checkpoint(trained, ckpt_dir / "grpo.npz")
            figures.training_curves(read_metrics_csv(run_dir / "grpo_metrics.csv"),
                                    run_dir / "figures" / "grpo_curves.png",
                                    title=f"variant {variant}")
            return trained

        params = _stage(run_dir, "grpo", compute_grpo,
                        lambda: pol.load_checkpoint(ckpt_dir / "grpo.npz"))
        art.checkpoints["grpo"] = ckpt_dir / "grpo.npz"
        art.metrics["grpo"] = run_dir / "grpo_metrics.csv"

    # -- evaluation
    def compute_eval():
        report = ev.evaluate(params, split.eval_questions, recipe.regime, cfg.eval.k,
                             cfg.eval.temperature, cfg.seed, cfg.eval.greedy,
                             cfg.grpo.max_len, cfg.run.workers)
        tag = f"model-{variant}"
        (run_dir / "eval_report.csv").write_text(ev.report_csv({tag: report}), encoding="utf-8")
        (run_dir / "eval_table.txt").write_text(ev.report_table({tag: report}),
                                                encoding="utf-8")
        return report

    art.report = _stage(run_dir, "eval", compute_eval, lambda: None)
    art.eval_report = run_dir / "eval_report.csv"
    return art


def read_eval_average(run_dir: str | Path) -> float:
    with open(Path(run_dir) / "eval_report.csv", newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            if row["category"] == "average":
                return float(row["accuracy"])
    raise ValueError(f"{run_dir}: eval_report.csv has no average row")
