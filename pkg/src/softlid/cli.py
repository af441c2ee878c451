"""Command-line pipeline: generate data, train, adapt, evaluate, report."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, resolve_config
from .evaluation import EvalReport, evaluate, make_traffic
from .lin import load_lin, reset_to_identity, save_lin, train_lin
from .synthlang import load_corpus
from .transducer import TransducerModel, train_base


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except (ConfigError, CheckpointError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="softlid",
        description=(
            "Many-to-one transducer translation with per-language linear "
            "input networks trained against a frozen base model."
        ),
    )
    sub = parser.add_subparsers(required=True, metavar="command")

    p = sub.add_parser("gen-data", help="generate the synthetic train/test splits")
    p.add_argument("config", help="experiment config (path or 'default')")
    p.add_argument("outdir", help="output directory for train.sldt / test.sldt")
    p.set_defaults(handler=cmd_gen_data)

    p = sub.add_parser("train-base", help="train the base model on mixed-language data")
    p.add_argument("config")
    p.add_argument("data", help="dataset directory or train .sldt file")
    p.add_argument("out", help="output checkpoint path")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.set_defaults(handler=cmd_train_base)

    p = sub.add_parser("train-lin", help="train a linear input network for one language")
    p.add_argument("config")
    p.add_argument("base", help="base model checkpoint")
    p.add_argument("data", help="dataset directory or train .sldt file")
    p.add_argument("out", help="output adapter path")
    p.add_argument("--language", required=True, help="language id to adapt")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(handler=cmd_train_lin)

    p = sub.add_parser("reset-lin", help="reset a trained adapter to the exact identity")
    p.add_argument("input")
    p.add_argument("out")
    p.set_defaults(handler=cmd_reset_lin)

    p = sub.add_parser("eval", help="decode a test split and write a BLEU report")
    p.add_argument("base", help="base model checkpoint")
    p.add_argument("testdir", help="dataset directory or test .sldt file")
    p.add_argument("report", help="output report JSON path")
    p.add_argument("--lin", default=None, help="adapter artifact to route all input through")
    p.add_argument(
        "--traffic",
        action="append",
        default=[],
        help="scenario: 'p99-L4', 'L4:0.99', or 'uniform' (repeatable)",
    )
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("report", help="render a per-language comparison table")
    p.add_argument("reports", nargs="+", help="report JSON files")
    p.set_defaults(handler=cmd_report)
    return parser


def _echo(config=None, seed=None, extra: dict | None = None) -> None:
    if config is not None:
        print(config.describe())
    if seed is not None:
        print(f"seed: {seed}")
    for key, value in (extra or {}).items():
        print(f"{key}: {value}")


def _load_split(data_path: str, split: str):
    path = Path(data_path)
    if path.is_dir():
        path = path / f"{split}.sldt"
    return load_corpus(path, split=split)


def cmd_gen_data(args) -> int:
    config = resolve_config(args.config)
    _echo(config, seed=config.suite.suite_seed)
    train, test = config.generate_data(out_dir=args.outdir)
    print(f"wrote {len(train)} train / {len(test)} test utterances to {args.outdir}")
    return 0


def cmd_train_base(args) -> int:
    config = resolve_config(args.config)
    seed = config.base_training.seed if args.seed is None else args.seed
    _echo(config, seed=seed)
    corpus = _load_split(args.data, "train")
    ckpt = train_base(config, corpus, seed=seed)
    save_checkpoint(args.out, ckpt)
    losses = ckpt.meta["epoch_mean_loss"]
    print(
        f"trained {ckpt.meta['steps']} steps, epoch loss {losses[0]:.3f} -> {losses[-1]:.3f}; "
        f"saved {args.out} ({ckpt.param_hash[:12]})"
    )
    return 0


def cmd_train_lin(args) -> int:
    config = resolve_config(args.config)
    seed = config.lin_training.seed if args.seed is None else args.seed
    _echo(config, seed=seed, extra={"language": args.language})
    base = load_checkpoint(args.base)
    corpus = _load_split(args.data, "train").filter_language(args.language)
    if len(corpus) == 0:
        raise ValueError(f"no utterances for language '{args.language}' in {args.data}")
    lin = train_lin(base, corpus, config, seed=seed)
    save_lin(args.out, lin, base_hash=base.param_hash)
    print(f"saved adapter for {args.language} to {args.out}")
    return 0


def cmd_reset_lin(args) -> int:
    lin, meta = load_lin(args.input)
    reset = reset_to_identity(lin)
    save_lin(args.out, reset, base_hash=str(meta.get("base_checkpoint_hash", "")))
    _echo(extra={"reset": f"{args.input} -> {args.out} (identity, dim {reset.dim})"})
    return 0


def cmd_eval(args) -> int:
    base = load_checkpoint(args.base)
    model = TransducerModel.from_arrays(base.model_config(), base.tensors)
    corpus = _load_split(args.testdir, "test")
    lin = None
    if args.lin is not None:
        lin, _ = load_lin(args.lin)
    languages = corpus.languages()
    traffics = [_parse_traffic(spec, languages) for spec in args.traffic]
    _echo(
        extra={
            "model": base.param_hash[:12],
            "lin": args.lin or "(none)",
            "traffic": [t.name for t in traffics] or "(none)",
        }
    )
    report = evaluate(model, corpus, lin=lin, traffics=traffics, model_id=base.param_hash)
    Path(args.report).write_text(report.to_json())
    for lang in sorted(report.per_language):
        print(f"  {lang}: {report.per_language[lang]:.1f}")
    print(f"  Avg.: {report.average:.1f}")
    for entry in report.weighted:
        print(f"  Weighted Avg. [{entry['name']}]: {entry['value']:.1f}")
    print(f"wrote {args.report}")
    return 0


def _parse_traffic(spec: str, languages):
    if spec == "uniform":
        share = 1.0 / len(languages)
        return make_traffic(languages[0], share, languages, name="uniform")
    if spec.startswith("p") and "-" in spec:
        percent, _, lang = spec[1:].partition("-")
        try:
            return make_traffic(lang, float(percent) / 100.0, languages, name=spec)
        except ValueError as exc:
            raise ValueError(f"bad traffic spec '{spec}': {exc}") from exc
    if ":" in spec:
        lang, _, share = spec.partition(":")
        return make_traffic(lang, float(share), languages)
    raise ValueError(f"unrecognized traffic spec '{spec}'")


def cmd_report(args) -> int:
    reports = []
    for path in args.reports:
        report = EvalReport.from_json(Path(path).read_text())
        reports.append((Path(path).stem, report))
    _echo(extra={"reports": [name for name, _ in reports]})

    languages = sorted({lang for _, r in reports for lang in r.per_language})
    scenario_names: list[str] = []
    for _, r in reports:
        for entry in r.weighted:
            if entry["name"] not in scenario_names:
                scenario_names.append(entry["name"])

    label_width = max(
        [len("languages")]
        + [len(l) for l in languages]
        + [len(f"Weighted Avg. [{n}]") for n in scenario_names]
        or [10]
    )
    col_width = max([8] + [len(name) for name, _ in reports])

    def row(label, cells):
        print(
            label.ljust(label_width)
            + "  "
            + "  ".join(str(c).rjust(col_width) for c in cells)
        )

    row("languages", [name for name, _ in reports])
    for lang in languages:
        row(lang, [f"{r.per_language[lang]:.1f}" if lang in r.per_language else "-" for _, r in reports])
    row("Avg.", [f"{r.average:.1f}" for _, r in reports])
    for scenario in scenario_names:
        cells = []
        for _, r in reports:
            match = [e for e in r.weighted if e["name"] == scenario]
            cells.append(f"{match[0]['value']:.1f}" if match else "-")
        row(f"Weighted Avg. [{scenario}]", cells)
    return 0


if __name__ == "__main__":
    sys.exit(main())
