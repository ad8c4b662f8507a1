"""Command-line entry point: ``seqjsp {gen,train,eval,gantt,oracle,pdr}``.

Exit codes: 0 success, 1 invalid input (bad config, file format, infeasible
list, shape mismatch), 2 runtime failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import io
import json
import logging
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np
import torch

from .checkpoint import CheckpointError, load_model_arrays, read_container
from .instance import InstanceFormatError, generate_flowshop, generate_taillard, read_dataset, read_instance, write_dataset
from .oracle import DEFAULT_NODE_BUDGET, optimal_makespan
from .policy import ModelConfig, PolicyModel, rollout
from .rules import RuleKind, run_pdr
from .schedule import GAP_INSERT, MODES, FeasibilityError, build_schedule, check_feasible, list_makespan, render_gantt_svg, render_gantt_text
from .search import active_search, eas_emb, sample_best
from .trainer import Trainer, TrainerConfig, TrainingError, derive_seed, taillard_set

log = logging.getLogger("seqjsp")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2

RULES = [r.value for r in RuleKind]
MODEL_METHODS = ["model-greedy", "model-sample-k", "active-search", "eas-emb"]
STOCHASTIC = {"model-sample-k", "active-search", "eas-emb"}
METHODS = MODEL_METHODS + RULES + ["oracle"]

# keys a training config must state explicitly
REQUIRED_TRAINER_KEYS = ("learning_rate", "grad_clip", "batch_size", "epoch_size", "n_epochs")


class UsageError(Exception):
    """Invalid user input; maps to exit code 1."""


# ---------------------------------------------------------------------------
# config files


def _coerce(raw: str, default):
    if isinstance(default, bool):
        if raw.lower() in ("true", "yes", "1"):
            return True
        if raw.lower() in ("false", "no", "0"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if default is None:
        return None if raw.lower() in ("none", "") else float(raw)
    return raw


def _section(parser: configparser.ConfigParser, name: str, cls, errors: list[str], required=()) -> dict:
    defaults = {f.name: f.default for f in fields(cls)}
    values = {}
    items = parser[name] if parser.has_section(name) else {}
    for key in items:
        if key not in defaults:
            errors.append(f"[{name}] unknown key {key!r}")
            continue
        try:
            values[key] = _coerce(items[key].strip(), defaults[key])
        except ValueError as exc:
            errors.append(f"[{name}] {key}: {exc}")
    for key in required:
        if key not in items:
            errors.append(f"[{name}] missing required key {key!r}")
    return values


def load_config(path, overrides: dict | None = None) -> tuple[ModelConfig, TrainerConfig]:
    """Parse an INI file with ``[model]`` and ``[trainer]`` sections.

    All problems are collected and raised together as one :class:`UsageError`.
    """
    parser = configparser.ConfigParser(interpolation=None)
    try:
        text = Path(path).read_text()
        parser.read_string(text, source=str(path))
    except (OSError, configparser.Error) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    errors: list[str] = []
    for name in parser.sections():
        if name not in ("model", "trainer"):
            errors.append(f"unknown section [{name}]")
    model_vals = _section(parser, "model", ModelConfig, errors)
    trainer_vals = _section(parser, "trainer", TrainerConfig, errors, REQUIRED_TRAINER_KEYS)
    overrides = overrides or {}
    model_vals.update(overrides.get("model", {}))
    trainer_vals.update(overrides.get("trainer", {}))
    model_cfg = trainer_cfg = None
    try:
        model_cfg = ModelConfig(**model_vals)
        errors += [f"[model] {e}" for e in model_cfg.errors()]
        trainer_cfg = TrainerConfig(**trainer_vals)
        errors += [f"[trainer] {e}" for e in trainer_cfg.errors()]
    except TypeError as exc:
        errors.append(str(exc))
    if errors:
        raise UsageError("invalid config:\n  " + "\n  ".join(errors))
    return model_cfg, trainer_cfg


def config_hash(model_cfg: ModelConfig, trainer_cfg: TrainerConfig) -> str:
    blob = json.dumps({"model": asdict(model_cfg), "trainer": asdict(trainer_cfg)}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# helpers


def _read_text(path) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None


def _load_instances(path) -> list:
    """A dataset file, or a single instance file."""
    text = _read_text(path)
    header = next((line.split() for line in text.splitlines() if line.strip()), [])
    try:
        # a dataset starts with a lone count, a single instance with "n m"
        return [read_instance(text)] if len(header) == 2 else read_dataset(text)
    except InstanceFormatError as exc:
        raise UsageError(f"{path}: {exc}") from None


def _write_text(path, text: str) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise UsageError(f"cannot write {path}: {exc.strerror}") from None


def _load_checkpoint(path, precision: str | None):
    try:
        header, arrays = read_container(path)
    except FileNotFoundError:
        raise UsageError(f"checkpoint not found: {path}") from None
    except (CheckpointError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    cfg = dict(header["model_config"])
    if precision:
        cfg["precision"] = precision
    model = PolicyModel(ModelConfig(**cfg))
    load_model_arrays(model, arrays)
    model.eval()
    return model, header.get("meta", {})


def _need_seed(args, what: str) -> int:
    if args.seed is None:
        raise UsageError(f"--seed is required for {what}")
    return args.seed


def _fmt(x: float) -> str:
    return f"{x:.2f}"


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen(args) -> int:
    if args.n < 1 or args.m < 1 or args.count < 0:
        raise UsageError("n, m must be >= 1 and count >= 0")
    make = generate_flowshop if args.kind == "fsp" else generate_taillard
    base = derive_seed(args.seed, "gen", args.kind)
    instances = [make(args.n, args.m, derive_seed(base, k)) for k in range(args.count)]
    _write_text(args.out, write_dataset(instances))
    print(f"wrote {args.count} {args.kind} instances ({args.n}x{args.m}) to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    overrides: dict = {"model": {"seed": args.seed}, "trainer": {"seed": args.seed}}
    if args.precision:
        overrides["model"]["precision"] = args.precision
    if args.mode:
        overrides["trainer"]["build_mode"] = args.mode
    model_cfg, trainer_cfg = load_config(args.config, overrides)
    if args.epochs is not None:
        trainer_cfg.n_epochs = args.epochs
    chash = config_hash(model_cfg, trainer_cfg)
    dataset = _load_instances(args.dataset) if args.dataset else None
    if dataset is not None:
        shapes = {inst.shape for inst in dataset}
        if shapes != {(trainer_cfg.n_jobs, trainer_cfg.n_machines)}:
            raise UsageError(f"dataset shapes {sorted(shapes)} differ from config ({trainer_cfg.n_jobs}, {trainer_cfg.n_machines})")
    if args.val_dataset:
        val = _load_instances(args.val_dataset)
    else:
        val = taillard_set(trainer_cfg.n_jobs, trainer_cfg.n_machines, args.val_size, trainer_cfg.seed, "val")
    if args.resume:
        trainer = Trainer.resume(args.resume, config=trainer_cfg, dataset=dataset, val_set=val, out_dir=args.out, config_hash=chash)
    else:
        trainer = Trainer(PolicyModel(model_cfg), trainer_cfg, dataset=dataset, val_set=val, out_dir=args.out, config_hash=chash)
    trainer.write_summary()
    curve = trainer.run()
    print(f"config hash {chash}")
    print("validation greedy mean per epoch: " + ", ".join(_fmt(c) for c in curve))
    print(f"checkpoint: {Path(args.out) / 'last.ckpt'}")
    return EXIT_OK


def _run_method(method, instances, args, model, seed):
    """Per-instance makespans (and optional certification flags) for one method."""
    mode = args.mode or GAP_INSERT
    if method in RULES:
        return np.array([list_makespan(inst, run_pdr(inst, method), mode) for inst in instances]), None
    if method == "oracle":
        res = [optimal_makespan(inst, node_budget=args.node_budget, mode=mode) for inst in instances]
        return np.array([r.optimal_makespan for r in res]), np.array([r.certified for r in res])
    if method == "model-greedy":
        with torch.no_grad():
            costs = [rollout(model, instances[lo : lo + 256], "greedy", build_mode=mode).makespans for lo in range(0, len(instances), 256)]
        return np.concatenate(costs), None
    if method == "model-sample-k":
        return sample_best(model, instances, args.samples, seed=derive_seed(seed, method), build_mode=mode).best_makespans, None
    if method == "active-search":
        out = [
            active_search(model, inst, args.search_steps, samples=args.search_samples, learning_rate=args.search_lr, seed=derive_seed(seed, method, k), build_mode=mode).best_makespans[0]
            for k, inst in enumerate(instances)
        ]
        return np.array(out), None
    if method == "eas-emb":
        res = eas_emb(model, instances, args.eas_steps, samples=args.eas_samples, learning_rate=args.eas_lr, seed=derive_seed(seed, method), build_mode=mode)
        return res.best_makespans, None
    raise UsageError(f"unknown method {method!r}")


def build_report(instances, results: dict, certified) -> tuple[list[dict], dict, str]:
    """Per-instance rows, per-method summary and the reference label."""
    methods = list(results)
    mat = np.stack([results[k] for k in methods], axis=1).astype(np.int64)
    best = mat.min(axis=1)
    if certified is not None and certified.all():
        ref, kind = results["oracle"].astype(np.int64), "oracle"
    else:
        ref, kind = best, "best-found"
    rows = []
    for i, inst in enumerate(instances):
        row = {"instance": i, "n": inst.n_jobs, "m": inst.n_machines, "reference": int(ref[i]), "certified": int(bool(certified[i])) if certified is not None else 0}
        row.update({k: int(results[k][i]) for k in methods})
        rows.append(row)
    ref_mean = float(ref.mean())
    summary = {k: {"mean": float(results[k].mean()), "gap": float(results[k].mean()) / ref_mean - 1.0} for k in methods}
    return rows, summary, kind


def render_table(summary: dict, kind: str, ref_mean: float) -> str:
    width = max(len("method"), *(len(k) for k in summary))
    lines = [f"{'method':<{width}}  {'Cmax':>10}  {'Gap':>8}", "-" * (width + 22)]
    for k, v in summary.items():
        lines.append(f"{k:<{width}}  {_fmt(v['mean']):>10}  {100 * v['gap']:>7.2f}%")
    lines.append(f"reference ({kind}) mean: {_fmt(ref_mean)}")
    return "\n".join(lines) + "\n"


def cmd_eval(args) -> int:
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    unknown = [m for m in methods if m not in METHODS]
    if unknown or not methods:
        raise UsageError(f"unknown methods {unknown}; choose from {', '.join(METHODS)}")
    instances = _load_instances(args.dataset)
    if not instances:
        raise UsageError("dataset is empty")
    shapes = {inst.shape for inst in instances}
    if len(shapes) != 1:
        raise UsageError(f"dataset mixes instance shapes {sorted(shapes)}")
    seed = _need_seed(args, "sampling-based methods") if STOCHASTIC & set(methods) else (args.seed or 0)
    model, meta = None, {}
    if set(MODEL_METHODS) & set(methods):
        if not args.checkpoint:
            raise UsageError("--checkpoint is required for model-based methods")
        model, meta = _load_checkpoint(args.checkpoint, args.precision)
        tc = meta.get("trainer_config", {})
        trained = (tc.get("n_jobs"), tc.get("n_machines"))
        if None not in trained and trained != next(iter(shapes)) and not args.allow_shape_mismatch:
            raise UsageError(
                f"checkpoint was trained on {trained[0]}x{trained[1]} but dataset is "
                f"{next(iter(shapes))[0]}x{next(iter(shapes))[1]} (pass --allow-shape-mismatch to override)"
            )
    results, certified = {}, None
    for method in methods:
        log.info("evaluating %s", method)
        costs, cert = _run_method(method, instances, args, model, seed)
        results[method] = np.asarray(costs)
        if cert is not None:
            certified = cert
    rows, summary, kind = build_report(instances, results, certified)
    ref_mean = float(np.mean([r["reference"] for r in rows]))
    table = render_table(summary, kind, ref_mean)
    out = Path(args.out)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]))
    w.writeheader()
    w.writerows(rows)
    _write_text(out / "per_instance.csv", buf.getvalue())
    _write_text(out / "table.txt", table)
    report = {
        "methods": methods,
        "summary": summary,
        "reference": kind,
        "reference_mean": ref_mean,
        "seed": args.seed,
        "mode": args.mode or GAP_INSERT,
        "checkpoint": str(args.checkpoint) if args.checkpoint else None,
        "config_hash": meta.get("config_hash"),
        "n_instances": len(instances),
    }
    _write_text(out / "report.json", json.dumps(report, indent=2, sort_keys=True) + "\n")
    sys.stdout.write(table)
    return EXIT_OK


def _parse_list(text: str, m: int) -> list[int]:
    """Row indices, or ``i,j`` pairs, separated by whitespace."""
    out = []
    for tok in text.split():
        if "," in tok:
            i, j = tok.strip("()").split(",")
            out.append(m * int(i) + int(j))
        else:
            out.append(int(tok))
    return out


def cmd_gantt(args) -> int:
    instances = _load_instances(args.instance)
    if len(instances) != 1:
        raise UsageError(f"{args.instance} holds {len(instances)} instances; gantt needs exactly one")
    inst = instances[0]
    mode = args.mode or GAP_INSERT
    if args.rule:
        perm = run_pdr(inst, args.rule)
    elif args.checkpoint:
        model, _ = _load_checkpoint(args.checkpoint, args.precision)
        with torch.no_grad():
            perm = rollout(model, [inst], "greedy", build_mode=mode).perms[0].tolist()
    else:
        try:
            perm = _parse_list(_read_text(args.list), inst.n_machines)
        except ValueError as exc:
            raise UsageError(f"{args.list}: cannot parse dispatch list: {exc}") from None
        try:
            ok, violation = check_feasible(perm, inst)
        except FeasibilityError as exc:
            raise UsageError(f"{args.list}: {exc}") from None
        if not ok:
            raise UsageError(f"infeasible dispatch list: {violation}")
    sched = build_schedule(inst, perm, mode)
    text = render_gantt_text(sched)
    if str(args.out).endswith(".txt"):
        _write_text(args.out, text)
    else:
        _write_text(args.out, render_gantt_svg(sched, title=f"makespan {sched.makespan}"))
    sys.stdout.write(text)
    return EXIT_OK


def cmd_oracle(args) -> int:
    instances = _load_instances(args.dataset)
    mode = args.mode or GAP_INSERT
    rows = []
    for k, inst in enumerate(instances):
        res = optimal_makespan(inst, node_budget=args.node_budget, mode=mode)
        rows.append({"instance": k, "makespan": res.optimal_makespan, "certified": int(res.certified), "explored": res.explored, "list": " ".join(map(str, res.optimal_list))})
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["instance", "makespan", "certified", "explored", "list"])
    w.writeheader()
    w.writerows(rows)
    if args.out:
        _write_text(args.out, buf.getvalue())
    mean = float(np.mean([r["makespan"] for r in rows])) if rows else float("nan")
    n_cert = sum(r["certified"] for r in rows)
    print(f"mean makespan {_fmt(mean)} over {len(rows)} instances ({n_cert} certified optimal)")
    return EXIT_OK


def cmd_pdr(args) -> int:
    rules = [r.strip() for r in args.rules.split(",") if r.strip()]
    try:
        rules = [RuleKind.parse(r).value for r in rules]
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    instances = _load_instances(args.dataset)
    if not instances:
        raise UsageError("dataset is empty")
    mode = args.mode or GAP_INSERT
    results = {r: np.array([list_makespan(inst, run_pdr(inst, r), mode) for inst in instances]) for r in rules}
    rows, summary, kind = build_report(instances, results, None)
    if args.out:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
        _write_text(args.out, buf.getvalue())
    sys.stdout.write(render_table(summary, kind, float(np.mean([r["reference"] for r in rows]))))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed (required by stochastic commands)")
    common.add_argument("--mode", choices=MODES, default=None, help="schedule builder mode (default gap-insert)")
    common.add_argument("--precision", choices=["f32", "f64"], default=None)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="seqjsp", description="Job-shop scheduling with a learned dispatch-list policy.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="generate a random dataset")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--m", type=int, required=True)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--kind", choices=["jsp", "fsp"], default="jsp")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen, needs_seed="gen")

    t = sub.add_parser("train", parents=[common], help="train a policy with REINFORCE")
    t.add_argument("--config", required=True, help="INI file with [model] and [trainer] sections")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--dataset", help="fixed training dataset (default: fresh Taillard instances per epoch)")
    t.add_argument("--val-dataset", help="validation dataset (default: generated from the seed)")
    t.add_argument("--val-size", type=int, default=100)
    t.add_argument("--epochs", type=int, default=None, help="override n_epochs (e.g. to extend a resumed run)")
    t.add_argument("--resume", help="checkpoint written by a previous train run")
    t.set_defaults(func=cmd_train, needs_seed="train")

    e = sub.add_parser("eval", parents=[common], help="compare methods on a dataset")
    e.add_argument("--dataset", required=True)
    e.add_argument("--methods", default="model-greedy,SPT,MWKR,MOPNR,FDD", help=f"comma list from: {', '.join(METHODS)}")
    e.add_argument("--checkpoint")
    e.add_argument("--out", required=True, help="output directory for per_instance.csv, table.txt, report.json")
    e.add_argument("--samples", type=int, default=128, help="samples per instance for model-sample-k")
    e.add_argument("--search-steps", type=int, default=200)
    e.add_argument("--search-samples", type=int, default=16)
    e.add_argument("--search-lr", type=float, default=1e-4)
    e.add_argument("--eas-steps", type=int, default=10)
    e.add_argument("--eas-samples", type=int, default=16)
    e.add_argument("--eas-lr", type=float, default=0.05)
    e.add_argument("--node-budget", type=int, default=DEFAULT_NODE_BUDGET)
    e.add_argument("--allow-shape-mismatch", action="store_true")
    e.set_defaults(func=cmd_eval)

    gt = sub.add_parser("gantt", parents=[common], help="draw the schedule of one instance")
    gt.add_argument("--instance", required=True)
    src = gt.add_mutually_exclusive_group(required=True)
    src.add_argument("--rule", choices=RULES)
    src.add_argument("--checkpoint")
    src.add_argument("--list", help="file with row indices k = m*i + j, or i,j pairs")
    gt.add_argument("--out", required=True, help=".svg (default) or .txt")
    gt.set_defaults(func=cmd_gantt)

    o = sub.add_parser("oracle", parents=[common], help="exact makespans by branch and bound")
    o.add_argument("--dataset", required=True)
    o.add_argument("--node-budget", type=int, default=DEFAULT_NODE_BUDGET)
    o.add_argument("--out")
    o.set_defaults(func=cmd_oracle)

    r = sub.add_parser("pdr", parents=[common], help="benchmark dispatching rules")
    r.add_argument("--dataset", required=True)
    r.add_argument("--rules", default=",".join(RULES))
    r.add_argument("--out")
    r.set_defaults(func=cmd_pdr)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if getattr(args, "needs_seed", None):
            _need_seed(args, args.command)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (TrainingError, RuntimeError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
