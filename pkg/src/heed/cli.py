"""Command line entry point: ``heed <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 runtime failure. Every run writes
``run_manifest.json`` into its output directory (the ``--out`` directory,
the parent of an ``--out`` file, or the working directory).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import subprocess
import sys
from dataclasses import fields, replace
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .core import TASKS, Task, read_records, validate_record, write_records

log = logging.getLogger("heed")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=None, help="random seed (default 0)")
    p.add_argument("--config", type=Path, default=None, help="JSON config file; flags override it")
    p.add_argument("--out", type=Path, default=None, help="output path")
    p.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="heed", description="Hypertext-feature entity extraction toolkit.")
    parser.add_argument("--version", action="version", version=f"heed {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="subcommand", parser_class=_Parser)

    p = sub.add_parser("generate", parents=[common], help="write a synthetic corpus")
    p.add_argument("--pages", type=int, default=None)
    p.add_argument("--entity-position-bias", type=float, default=None)
    p.add_argument("--length-mean", type=float, default=None)

    p = sub.add_parser("extract", parents=[common], help="HTML file to a JSONL record")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--viewport", type=float, default=1280.0)
    p.add_argument("--lang", default="en")
    p.add_argument("--page-id", default=None)

    p = sub.add_parser("train", parents=[common], help="train a tagger")
    p.add_argument("--data", type=Path, required=True, help="directory with train.jsonl and dev.jsonl")
    for flag, typ in (("--epochs", int), ("--lr", float), ("--batch-size", int), ("--max-len", int),
                      ("--experts", int), ("--d-model", int), ("--layers", int), ("--ortho-weight", float)):
        p.add_argument(flag, type=typ, default=None)
    p.add_argument("--ortho", action="store_true", default=None)

    p = sub.add_parser("eval", parents=[common], help="score a checkpoint")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--granularity", choices=["span", "token"], default="span")

    p = sub.add_parser("ablate", parents=[common], help="retrain with one ablation and compare")
    p.add_argument("--axis", required=True)
    p.add_argument("--name", required=True)
    p.add_argument("--data", type=Path, required=True, help="directory with train/dev/test.jsonl")
    p.add_argument("--epochs", type=int, default=None)

    p = sub.add_parser("analyze-router", parents=[common], help="mean routing weights per language")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--task", default="price", choices=[t.value for t in TASKS])

    p = sub.add_parser("export-reprs", parents=[common], help="dump expert representations and PCA")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--task", default="price", choices=[t.value for t in TASKS])
    p.add_argument("--max-pages", type=int, default=None)

    p = sub.add_parser("llm-baseline", parents=[common], help="zero-shot LLM baseline")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--task", action="append", choices=[t.value for t in TASKS], default=None)
    p.add_argument("--hypertext", action="store_true")
    p.add_argument("--mock", nargs="?", const="oracle", choices=["oracle", "empty"], default=None)
    p.add_argument("--max-in-flight", type=int, default=4)

    p = sub.add_parser("validate", parents=[common], help="check a JSONL file")
    p.add_argument("--data", type=Path, required=True)
    return parser


# -- helpers -----------------------------------------------------------------

def _load_config(path: Path | None) -> dict:
    if path is None:
        return {}
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON config ({exc})") from exc


def _merge(dataclass_type, file_values: dict, flag_values: dict):
    """Defaults < config file < flags; unknown keys are usage errors."""
    names = {f.name for f in fields(dataclass_type)}
    unknown = set(file_values) - names
    if unknown:
        raise UsageError(f"unknown {dataclass_type.__name__} keys in config: {sorted(unknown)}")
    values = dict(file_values)
    values.update({k: v for k, v in flag_values.items() if v is not None})
    return dataclass_type(**values)


def _git_version() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True, text=True,
                             timeout=5, cwd=Path(__file__).resolve().parent)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _read_split(data: Path, split: str):
    path = data / f"{split}.jsonl"
    if not path.exists():
        raise FileNotFoundError(f"{path} not found")
    return read_records(path)


def _train_configs(args, cfg: dict):
    from .model import ModelConfig
    from .trainer import TrainConfig

    model_cfg = _merge(ModelConfig, cfg.get("model", {}), {
        "n_experts": getattr(args, "experts", None), "d_model": getattr(args, "d_model", None),
        "n_layers": getattr(args, "layers", None), "max_len": getattr(args, "max_len", None)})
    train_cfg = _merge(TrainConfig, cfg.get("train", {}), {
        "epochs": getattr(args, "epochs", None), "lr": getattr(args, "lr", None),
        "batch_size": getattr(args, "batch_size", None), "max_len": getattr(args, "max_len", None),
        "ortho": getattr(args, "ortho", None), "ortho_weight": getattr(args, "ortho_weight", None),
        "seed": args.seed})
    return model_cfg, train_cfg


def _write_json(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    return path


# -- subcommands -------------------------------------------------------------

def cmd_generate(args, cfg):
    from .pagegen import GenConfig, generate_corpus

    out = args.out or Path("data")
    gen = _merge(GenConfig, cfg, {"seed": args.seed, "n_pages": args.pages,
                                  "entity_position_bias": args.entity_position_bias,
                                  "length_mean": args.length_mean})
    manifest = generate_corpus(gen, out)
    print(f"generated {gen.n_pages} pages into {out} (hash {manifest['hash'][:12]})")
    return out, [out], gen.__dict__


def cmd_extract(args, cfg):
    from .extractor import extract_record

    html = args.input.read_text(encoding="utf-8")
    rec = extract_record(html, args.viewport, page_id=args.page_id or args.input.stem, language=args.lang)
    out = args.out or args.input.with_suffix(".jsonl")
    write_records([rec], out)
    print(f"{len(rec.tokens)} tokens -> {out}")
    return out.parent, [out], {"viewport": args.viewport, "lang": args.lang}


def cmd_train(args, cfg):
    from .trainer import train

    model_cfg, train_cfg = _train_configs(args, cfg)
    out = args.out or Path("runs/run")
    train_set = _read_split(args.data, "train")
    dev_path = args.data / "dev.jsonl"
    dev_set = read_records(dev_path) if dev_path.exists() else None
    res = train(train_set, dev_set, model_cfg, train_cfg, out_dir=out)
    best = "n/a" if res.best_dev_f1 is None else f"{res.best_dev_f1:.2f}"
    print(f"best epoch {res.best_epoch} dev micro-F1 {best}; checkpoint in {out / 'checkpoint'}")
    return out, [out / "checkpoint", out / "metrics.csv"], {"model": model_cfg.to_dict(),
                                                            "train": train_cfg.to_dict()}


def _load_model(path: Path):
    from .model import load_checkpoint

    if (path / "checkpoint" / "model.json").exists():
        path = path / "checkpoint"
    return load_checkpoint(path)


def cmd_eval(args, cfg):
    from .evalkit import evaluate

    model = _load_model(args.model)
    report = evaluate(model, read_records(args.data), granularity=args.granularity)
    out = args.out or Path("report.json")
    report.write(out)
    o = report.overall
    print(f"P {o.precision:.2f}  R {o.recall:.2f}  F1 {o.f1:.2f}")
    return out.parent, [out, out.with_suffix(".csv")], {"granularity": args.granularity}


def cmd_ablate(args, cfg):
    from .evalkit import AblationSpec, run_ablation, write_csv

    spec = AblationSpec(args.axis, args.name)
    model_cfg, train_cfg = _train_configs(args, cfg)
    res = run_ablation(spec, _read_split(args.data, "train"), _read_split(args.data, "dev"),
                       _read_split(args.data, "test"), model_cfg, train_cfg)
    out = args.out or Path("ablation")
    _write_json(out / "ablation.json", res.to_dict())
    write_csv(res.rows(), out / "ablation.csv", ["ablation", "task", "P", "R", "F1", "dP", "dR", "dF1"])
    for row in res.rows():
        print(f"{row['task']:>8}  F1 {row['F1']:6.2f}  dF1 {row['dF1']:+6.2f}")
    return out, [out / "ablation.json", out / "ablation.csv"], {"axis": spec.axis, "name": spec.name,
                                                                "train": train_cfg.to_dict()}


def cmd_analyze_router(args, cfg):
    from .evalkit import profile_rows, router_profile, write_csv

    model = _load_model(args.model)
    profile = router_profile(model, read_records(args.data), args.task)
    out = args.out or Path("router")
    rows = profile_rows(profile, model.config)
    write_csv(rows, out / "router_profile.csv", ["language", "expert", "alpha"])
    _write_json(out / "router_profile.json", {lang: [float(x) for x in v] for lang, v in profile.items()})
    return out, [out / "router_profile.csv", out / "router_profile.json"], {"task": args.task}


def cmd_export_reprs(args, cfg):
    from .evalkit import export_representations

    model = _load_model(args.model)
    records = read_records(args.data)[: args.max_pages]
    exp = export_representations(model, records, args.task)
    out = args.out or Path("reprs")
    exp.save(out)
    print(f"{len(exp)} rows -> {out}")
    return out, [out / "representations.npz", out / "pca.csv"], {"task": args.task}


def cmd_llm_baseline(args, cfg):
    from . import llm_baseline as lb

    records = read_records(args.data)
    tasks = [Task(t) for t in (args.task or [t.value for t in TASKS])]
    if args.mock == "oracle":
        client = lb.OracleClient.from_records(records, tasks, args.hypertext)
    elif args.mock == "empty":
        client = lb.StaticClient("[]")
    else:
        client = lb.HttpCompletionClient(max_in_flight=args.max_in_flight)
    out = args.out or Path("llm_baseline")
    res = lb.run_baseline(records, client, args.hypertext, tasks, args.max_in_flight,
                          transcript_path=out / "transcript.jsonl")
    res.report.write(out / "report.json")
    _write_json(out / "summary.json", res.to_dict())
    o = res.report.overall
    print(f"P {o.precision:.2f}  R {o.recall:.2f}  F1 {o.f1:.2f}" + ("  (incomplete)" if res.incomplete else ""))
    return out, [out / "transcript.jsonl", out / "report.json", out / "summary.json"], {
        "tasks": [t.value for t in tasks], "hypertext": args.hypertext, "mock": args.mock}


def cmd_validate(args, cfg):
    records = read_records(args.data)
    problems = [(r.page_id, v) for r in records for v in validate_record(r)]
    for page_id, v in problems:
        print(f"{page_id}: {v}")
    if problems:
        raise ValueError(f"{len(problems)} violations in {args.data}")
    print(f"{len(records)} records OK")
    out_dir = args.out if args.out is not None else Path(".")
    return out_dir, [], {}


COMMANDS = {
    "generate": cmd_generate, "extract": cmd_extract, "train": cmd_train, "eval": cmd_eval,
    "ablate": cmd_ablate, "analyze-router": cmd_analyze_router, "export-reprs": cmd_export_reprs,
    "llm-baseline": cmd_llm_baseline, "validate": cmd_validate,
}


def _resolved_seed(flag, resolved: dict):
    """The seed a run actually used: the flag, else the merged config's, else 0."""
    if flag is not None:
        return flag
    for section in (resolved, resolved.get("train", {})):
        if isinstance(section, dict) and section.get("seed") is not None:
            return section["seed"]
    return 0


def _failure_dir(out: Path | None) -> Path:
    """Where a failed run leaves its manifest: the --out directory (or a file's parent), else cwd."""
    if out is None:
        return Path(".")
    return out.parent if out.suffix else out


def write_manifest(out_dir: Path, command: str, argv, seed, config: dict, outputs, started, status) -> Path:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    manifest = {
        "subcommand": command,
        "argv": list(argv),
        "config_hash": hashlib.sha256(blob).hexdigest(),
        "seed": seed,
        "version": _git_version(),
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
        "outputs": [str(p) for p in outputs],
        "exit_code": status,
    }
    return _write_json(Path(out_dir) / "run_manifest.json", manifest)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=args.log_level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    started = datetime.now(timezone.utc).isoformat()
    try:
        cfg = _load_config(args.config)
        out_dir, outputs, resolved = COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        log.error("%s failed: %s", args.command, exc)
        log.debug("traceback", exc_info=True)
        try:
            write_manifest(_failure_dir(args.out), args.command, argv, _resolved_seed(args.seed, {}), {},
                           [], started, EXIT_RUNTIME)
        except OSError as werr:
            log.error("could not write run manifest: %s", werr)
        return EXIT_RUNTIME
    write_manifest(out_dir, args.command, argv, _resolved_seed(args.seed, resolved), resolved, outputs,
                   started, EXIT_OK)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
