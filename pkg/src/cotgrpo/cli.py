"""Command line entry point.

Each stage of the pipeline is exposed as a subcommand so it can be run and
inspected on its own; ``run <variant>`` chains them.  Exit codes: 0 success,
1 usage error, 2 stage failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Sequence

from . import __version__
from . import curriculum as cur
from . import evaluate as ev
from . import policy as pol
from . import sft as sft_mod
from . import synth
from .grammar import Regime
from .grpo import grpo_train, read_metrics_csv, write_metrics_csv
from .harness import figures
from .harness.compare import compare_runs, write_comparison
from .harness.config import ExperimentConfig, load_config
from .harness.pipeline import (VARIANTS, StageError, build_base, make_data, run_variant,
                               write_sft_metrics)

EXIT_OK, EXIT_USAGE, EXIT_STAGE = 0, 1, 2
SPLITS = ("sft", "rl", "eval")

log = logging.getLogger("cotgrpo")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Raises instead of exiting so ``main`` owns the exit code."""

    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _global_flags() -> argparse.ArgumentParser:
    # SUPPRESS keeps a flag given before the subcommand from being reset after it
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", default=argparse.SUPPRESS, help="INI config file")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="run seed")
    p.add_argument("--out", default=argparse.SUPPRESS, help="output file or directory")
    p.add_argument("--workers", type=int, default=argparse.SUPPRESS,
                   help="rollout worker threads (results do not depend on it)")
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    return p


def _regime(text: str) -> Regime:
    try:
        return Regime.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> _Parser:
    common = _global_flags()
    parser = _Parser(prog="cotgrpo", parents=[common],
                     description="SFT warm start plus curriculum GRPO on synthetic questions.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        return sub.add_parser(name, parents=[common], help=help_text, description=help_text)

    add("gen-data", "write the sft, rl and eval splits to one JSONL file")

    p = add("sft", "supervised warm start on teacher traces")
    p.add_argument("--data", required=True, help="JSONL from gen-data")
    p.add_argument("--regime", type=_regime, default=Regime.STRUCTURED)
    p.add_argument("--init", help="starting checkpoint (default: base policy)")

    p = add("pass-rate", "score RL questions by Direct-prompt pass rate")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", help="policy to score with (default: base policy)")

    p = add("plan", "filter zero-pass questions and order the rest")
    p.add_argument("--data", required=True, help="JSONL from pass-rate")
    p.add_argument("--kind", choices=(cur.CURRICULUM, cur.SHUFFLED), default=cur.CURRICULUM)

    p = add("grpo", "GRPO over a plan")
    p.add_argument("--data", required=True, help="JSONL from pass-rate")
    p.add_argument("--plan", required=True)
    p.add_argument("--regime", type=_regime, default=Regime.STRUCTURED)
    p.add_argument("--init", help="starting checkpoint (default: base policy)")

    p = add("eval", "k-trial evaluation on the eval split")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", help="policy to evaluate (default: base policy)")
    p.add_argument("--regime", type=_regime, default=Regime.STRUCTURED)
    p.add_argument("--tag", default="model")

    p = add("run", "full pipeline for one variant")
    p.add_argument("variant", help=f"one of: {', '.join(VARIANTS)}")

    p = add("compare", "align metric series across run directories")
    p.add_argument("runs", nargs="+", help="run directories (first is the reference)")
    p.add_argument("--metric", default="answer_rate")
    p.add_argument("--fraction", type=float, default=0.9)
    p.add_argument("--reference", choices=("final", "max"), default="final")
    return parser


# -- helpers

def _config(args: argparse.Namespace) -> ExperimentConfig:
    try:
        cfg = load_config(getattr(args, "config", None))
    except (OSError, ValueError) as exc:
        raise UsageError(f"bad config: {exc}") from None
    return cfg.with_overrides(getattr(args, "seed", None),
                              getattr(args, "workers", None)).resolved()


def _out(args: argparse.Namespace, default: str) -> Path:
    return Path(getattr(args, "out", None) or default)


def _split(questions: list[synth.Question], name: str) -> list[synth.Question]:
    picked = [q for q in questions if q.extra.get("split") == name]
    return picked or questions


def _params(cfg: ExperimentConfig, path: str | None) -> pol.PolicyParams:
    return pol.load_checkpoint(path) if path else build_base(cfg)


def _stage(name: str, fn: Callable[[], None]) -> None:
    try:
        fn()
    except (StageError, UsageError):
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


# -- subcommands

def cmd_gen_data(args, cfg):
    out = _out(args, "data.jsonl")

    def go():
        split = make_data(cfg)
        records = []
        for name, qs in zip(SPLITS, (split.sft_questions, split.rl_questions,
                                     split.eval_questions)):
            for q in qs:
                q.extra["split"] = name
                records.append(q)
        out.parent.mkdir(parents=True, exist_ok=True)
        synth.save_jsonl(records, out)
        print(f"wrote {len(records)} questions to {out}")

    _stage("gen-data", go)


def cmd_sft(args, cfg):
    out = _out(args, "sft.npz")

    def go():
        qs = _split(synth.load_jsonl(args.data), "sft")
        teachers = sft_mod.teacher_set(qs, args.regime, cfg.teacher, cfg.seed)
        params, history = sft_mod.sft_train(_params(cfg, args.init), teachers,
                                            synth.by_id(qs), cfg.sft)
        out.parent.mkdir(parents=True, exist_ok=True)
        pol.save_checkpoint(params, out)
        write_sft_metrics(history, out.with_suffix(".csv"))
        print(f"final epoch loss {history[-1]:.4f}; checkpoint {out}")

    _stage("sft", go)


def cmd_pass_rate(args, cfg):
    out = _out(args, "rl_scored.jsonl")

    def go():
        qs = _split(synth.load_jsonl(args.data), "rl")
        rates = cur.estimate_pass_rates(_params(cfg, args.checkpoint), qs,
                                        cfg.pass_rate.attempts, cfg.pass_rate.temperature,
                                        cfg.seed, cfg.grpo.max_len, workers=cfg.run.workers)
        for q, r in zip(qs, rates):
            q.pass_rate = r.rate
        out.parent.mkdir(parents=True, exist_ok=True)
        synth.save_jsonl(qs, out)
        zero = sum(r.successes == 0 for r in rates)
        print(f"scored {len(qs)} questions ({zero} with zero pass rate) to {out}")

    _stage("pass_rate", go)


def cmd_plan(args, cfg):
    out = _out(args, "plan.txt")

    def go():
        qs = synth.load_jsonl(args.data)
        rates = {q.id: q.pass_rate for q in qs if q.pass_rate is not None}
        pool = cur.filter_zero_pass(qs, rates)
        if not pool:
            raise ValueError("every question has a zero pass rate")
        plan = (cur.order_by_difficulty(pool, rates) if args.kind == cur.CURRICULUM
                else cur.shuffled_plan(pool, cfg.seed))
        out.parent.mkdir(parents=True, exist_ok=True)
        cur.save_plan(plan, out)
        print(f"{plan.ordering_kind} plan with {len(plan)} of {len(qs)} questions to {out}")

    _stage("plan", go)


def cmd_grpo(args, cfg):
    out = _out(args, "grpo")

    def go():
        qs = synth.load_jsonl(args.data)
        plan = cur.load_plan(args.plan)
        params, history = grpo_train(_params(cfg, args.init), plan.ids, synth.by_id(qs),
                                     args.regime, cfg.grpo, cfg.reward)
        out.mkdir(parents=True, exist_ok=True)
        write_metrics_csv(history, out / "grpo_metrics.csv")
        pol.save_checkpoint(params, out / "grpo.npz")
        figures.training_curves(read_metrics_csv(out / "grpo_metrics.csv"),
                                out / "grpo_curves.png", title=f"GRPO ({args.regime.value})")
        last = history[-1]
        print(f"{len(history)} steps; final answer_rate {last.answer_rate:.3f}; "
              f"artifacts in {out}")

    _stage("grpo", go)


def cmd_eval(args, cfg):
    out = _out(args, "eval")

    def go():
        qs = _split(synth.load_jsonl(args.data), "eval")
        report = ev.evaluate(_params(cfg, args.checkpoint), qs, args.regime, cfg.eval.k,
                             cfg.eval.temperature, cfg.seed, cfg.eval.greedy,
                             cfg.grpo.max_len, cfg.run.workers)
        out.mkdir(parents=True, exist_ok=True)
        (out / "eval_report.csv").write_text(ev.report_csv({args.tag: report}),
                                             encoding="utf-8")
        table = ev.report_table({args.tag: report})
        (out / "eval_table.txt").write_text(table, encoding="utf-8")
        print(table, end="")

    _stage("eval", go)


def cmd_run(args, cfg):
    if args.variant not in VARIANTS:
        raise UsageError(f"usage: cotgrpo run {{{','.join(VARIANTS)}}}\n"
                         f"cotgrpo run: error: unknown variant {args.variant!r}; "
                         f"valid variants: {', '.join(VARIANTS)}")
    out = _out(args, f"runs/{args.variant}{cfg.seed}")
    art = run_variant(args.variant, cfg, out)
    print((out / "eval_table.txt").read_text(encoding="utf-8"), end="")
    print(f"artifacts in {art.run_dir}")


def cmd_compare(args, cfg):
    out = _out(args, "comparison")

    def go():
        comp = compare_runs(args.runs, args.metric, args.fraction, args.reference)
        write_comparison(comp, out)
        print(comp.summary_csv(), end="")
        print(f"series, summary and figure in {out}")

    _stage("compare", go)


COMMANDS = {
    "gen-data": cmd_gen_data, "sft": cmd_sft, "pass-rate": cmd_pass_rate, "plan": cmd_plan,
    "grpo": cmd_grpo, "eval": cmd_eval, "run": cmd_run, "compare": cmd_compare,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False)
                            else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
        cfg = _config(args)
        COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
