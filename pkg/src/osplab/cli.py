"""Command-line entry point: ``osplab <subcommand> [flags]``.

Exit codes: 0 on success, 2 for invalid flags or configuration, 3 when a result
violates a capacity bound or an information inequality.

Settings come from flags, then an optional ``--config`` file, then defaults.
The file holds one ``key = value`` per line; ``#`` starts a comment and unknown
keys are rejected. See ``configs/example.cfg`` for every key.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from . import bounds, experiments, figures, infotheory, taxonomy
from .models import ARCHITECTURES, ConfigError, ModelConfig, load_checkpoint, max_step_flops, peak_state_bits, save_checkpoint
from .rng import DEFAULT_SEED, stream
from .task import TaskConfig, TaskConfigError, generate
from .trainer import TrainConfig, TrainConfigError, evaluate, eval_results_csv, loss_curve_csv, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VIOLATION = 3

_MODEL_KEYS = {f.name: f.type for f in dataclasses.fields(ModelConfig)}
_TRAIN_KEYS = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
_RUN_KEYS = {"outdir": "str", "workers": "int", "n": "int", "T": "int", "V": "int", "instances": "int"}
CONFIG_KEYS = {**_MODEL_KEYS, **_TRAIN_KEYS, **_RUN_KEYS}
CONFIG_KEYS.pop("dtype")


class UsageError(ValueError):
    """Bad flag or config value; reported with exit code 2."""


def _coerce(key: str, raw: str):
    kind = CONFIG_KEYS[key]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise UsageError(f"config key {key!r}: expected {kind}, got {raw!r}") from None
    return raw


def load_config(path: str | Path) -> dict:
    """Parse a ``key = value`` file, rejecting unknown keys and malformed values."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}; known keys: {', '.join(sorted(CONFIG_KEYS))}")
        out[key] = _coerce(key, raw)
    return out


def resolve(args: argparse.Namespace) -> dict:
    """Merged settings: flags override the config file, which overrides defaults."""
    settings = load_config(args.config) if getattr(args, "config", None) else {}
    for key, value in vars(args).items():
        if value is not None and key in CONFIG_KEYS:
            settings[key] = value
    return settings


def model_from(settings: dict) -> ModelConfig:
    kw = {k: v for k, v in settings.items() if k in _MODEL_KEYS}
    arch = kw.pop("arch", "transformer")
    return ModelConfig.for_arch(arch, **kw)


def train_from(settings: dict) -> TrainConfig:
    kw = {k: v for k, v in settings.items() if k in _TRAIN_KEYS}
    profile = kw.pop("profile", "full")
    if "total_steps" in kw and "warmup_steps" not in kw:
        kw["warmup_steps"] = min(200, max(kw["total_steps"] - 1, 0))
    return TrainConfig.for_profile(profile, **kw)


# --- subcommands -------------------------------------------------------------------


def cmd_gen_task(args) -> int:
    cfg = TaskConfig(args.n, args.T, args.V)
    lines = [generate(cfg, stream(args.seed, "gen-task", i)).to_line() for i in range(args.count)]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.count} instance(s) to {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_bound(args) -> int:
    print(bounds.recall_bound(args.q_bits, args.V, args.eps))
    return EXIT_OK


def cmd_lipschitz_bound(args) -> int:
    print(bounds.lipschitz_bound(args.d, args.b, args.L, args.T, args.V, args.eps))
    return EXIT_OK


def cmd_ecr(args) -> int:
    if args.arch:
        model = ModelConfig.for_arch(args.arch, r_attn=args.r_attn, N=args.N)
        flops, bits, d = max_step_flops(model, args.T), peak_state_bits(model, args.T), model.d
    else:
        if args.flops is None or args.bits is None:
            raise UsageError("ecr needs --arch or both --flops and --bits")
        flops, bits, d = args.flops, args.bits, args.d
    prof = bounds.ecr_profile(flops, bits, args.n_star, args.T, d, args.V, args.b, args.eps, warn=False)
    note = "  (outside the unit cube)" if prof.out_of_unit_cube else ""
    print(f"step_flops={flops} state_bits={bits} e={prof.e:.6g} c={prof.c:.6g} r={prof.r:.6g}{note}")
    return EXIT_OK


def model_descriptor(model: ModelConfig) -> bounds.ArchDescriptor:
    """Affine meters in ``T`` read off the accounting formulas."""
    bits0, bits1 = peak_state_bits(model, 0), peak_state_bits(model, 1)
    f1, f2 = max_step_flops(model, 1), max_step_flops(model, 2)
    r_attn = model.r_attn if model.arch == "hybrid" else None
    return bounds.ArchDescriptor(model.label, bounds.Affine(bits0, bits1 - bits0), bounds.Affine(2 * f1 - f2, f2 - f1),
                                 strong_rec=model.n_attn > 0, r_attn=r_attn)


def cmd_classify(args) -> int:
    if args.taxonomy:
        matches = [r for r in taxonomy.TAXONOMY if r.name.lower() == args.taxonomy.lower()]
        if not matches:
            raise UsageError(f"no taxonomy row named {args.taxonomy!r}")
        row = matches[0]
        region = bounds.classify(row.descriptor()) if row.unambiguous else row.region
        print(f"{row.name}: {region}")
        return EXIT_OK
    if args.arch:
        desc = model_descriptor(ModelConfig.for_arch(args.arch, r_attn=args.r_attn or 0.0, N=args.N))
    else:
        if args.state is None or args.flops is None:
            raise UsageError("classify needs --arch, --taxonomy, or both --state and --flops")
        desc = bounds.ArchDescriptor("custom", bounds.Affine(*args.state), bounds.Affine(*args.flops),
                                     args.strong_rec, args.r_attn)
    print(f"{desc.name}: {bounds.classify(desc)}")
    return EXIT_OK


def cmd_taxonomy(args) -> int:
    if args.format == "csv":
        text = taxonomy.to_csv()
    else:
        text = "\n".join(f"{r.index:>2}  {r.name:<32} {r.category:<14} eff={r.eff:<7} comp={r.comp:<7} "
                         f"rec={r.rec:<7} {r.region}" for r in taxonomy.TAXONOMY) + "\n"
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {len(taxonomy.TAXONOMY)} rows to {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_train(args) -> int:
    settings = resolve(args)
    model = model_from(settings)
    cfg = train_from(settings)
    n, T = settings.get("n", 1), settings.get("T", 32)
    task = TaskConfig(n, T, settings.get("V", 32))
    out = Path(settings.get("outdir", "run"))
    out.mkdir(parents=True, exist_ok=True)
    result = train(model, task, cfg)
    ev = evaluate(result.params, model, n, T, settings.get("instances", cfg.eval_instances), cfg.seed, task.V)
    save_checkpoint(out / "model.npz", model, result.params, {"n": n, "T": T, "train": cfg.to_dict()})
    (out / "loss.csv").write_text(loss_curve_csv(result.losses))
    (out / "eval.csv").write_text(eval_results_csv([ev]))
    print(f"{model.label} n={n} T={T} steps={cfg.total_steps} final_loss={result.final_loss:.4f} "
          f"accuracy={ev.accuracy:.3f} -> {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model, params, extra = load_checkpoint(args.checkpoint)
    n = args.n if args.n is not None else extra.get("n", 1)
    T = args.T if args.T is not None else extra.get("T", 32)
    ev = evaluate(params, model, n, T, args.instances, args.seed, args.V)
    if args.out:
        Path(args.out).write_text(eval_results_csv([ev]))
    print(f"{model.label} n={n} T={T} accuracy={ev.accuracy:.3f} over {ev.instances} instances")
    return EXIT_OK


def cmd_experiment(args) -> int:
    settings = resolve(args)
    names = list(experiments.EXPERIMENTS) if args.name == "all" else [args.name]
    lab = experiments.Lab(profile=settings.get("profile", "fast"), seed=settings.get("seed", DEFAULT_SEED),
                          outdir=settings.get("outdir", "results"), workers=settings.get("workers", 1),
                          steps=settings.get("total_steps"))
    try:
        results = experiments.run_experiments(names, lab)
    except experiments.TheoremViolation as exc:
        print(f"THEOREM VIOLATION: {exc}", file=sys.stderr)
        return EXIT_VIOLATION
    for res in results:
        print(f"{res.experiment}: {len(res.rows)} rows, {len(res.summaries)} models, {res.seconds:.1f}s")
        for s in res.summaries:
            print(f"  {s.arch:<20} T={s.T:<3} n*={s.n_star:<3} bound={s.bound_n_star:<7} r={s.r:.3f}")
    print(f"manifest: {Path(lab.outdir) / 'manifest.json'}")
    return EXIT_OK


def cmd_oracle(args) -> int:
    reports = infotheory.oracle_suite(args.count, args.seed, args.max_state_bits, args.max_V, args.max_n)
    bad = [r for r in reports if not r.ok]
    if args.out:
        rows = [{"osp": i, "n": r.n, "V": r.V, "state_bits": r.state_bits, "I_v_s": r.mi_total,
                 "sum_I_vi_s": r.sum_pair_mi, "ok": r.ok} for i, r in enumerate(reports)]
        Path(args.out).write_text(figures.rows_to_csv(rows))
    print(f"{len(reports) - len(bad)}/{len(reports)} processors satisfy every inequality")
    for r in bad:
        for v in r.violations:
            print(f"  violation: {v}", file=sys.stderr)
    return EXIT_VIOLATION if bad else EXIT_OK


def _numeric(row: dict) -> dict:
    return {k: (None if v == "" else v) for k, v in row.items()}


def cmd_plot(args) -> int:
    rows = [_numeric(r) for r in figures.read_csv(Path(args.rows).read_text())]
    csv_path, svg_path = figures.emit_figure_data(rows, args.figure, args.out)
    print(f"wrote {csv_path} and {svg_path}")
    return EXIT_OK


# --- parser ----------------------------------------------------------------------------


def _pair(text: str) -> tuple[float, float]:
    try:
        a, b = (float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'intercept,slope', got {text!r}") from None
    return a, b


def _add_model_flags(p):
    p.add_argument("--arch", choices=ARCHITECTURES)
    p.add_argument("--r-attn", dest="r_attn", type=float)
    p.add_argument("--N", type=int)
    p.add_argument("--d", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="osplab", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-task", help="write associative-recall instances as JSON lines")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--T", type=int, required=True)
    p.add_argument("--V", type=int, default=32)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gen_task)

    p = sub.add_parser("bound", help="largest recallable pair count for a state budget")
    p.add_argument("--q-bits", dest="q_bits", type=float, required=True)
    p.add_argument("--V", type=int, default=32)
    p.add_argument("--eps", type=float, default=bounds.DEFAULT_EPSILON)
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("lipschitz-bound", help="capacity of a d-dimensional L-Lipschitz state after T steps")
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--b", type=int, default=32)
    p.add_argument("--L", type=float, required=True)
    p.add_argument("--T", type=int, required=True)
    p.add_argument("--V", type=int, default=32)
    p.add_argument("--eps", type=float, default=bounds.DEFAULT_EPSILON)
    p.set_defaults(func=cmd_lipschitz_bound)

    p = sub.add_parser("ecr", help="normalized (e, c, r) profile")
    _add_model_flags(p)
    p.add_argument("--flops", type=int, help="max per-step FLOPs (instead of --arch)")
    p.add_argument("--bits", type=int, help="peak state bits (instead of --arch)")
    p.add_argument("--n-star", dest="n_star", type=int, required=True)
    p.add_argument("--T", type=int, required=True)
    p.add_argument("--V", type=int, default=32)
    p.add_argument("--b", type=int, default=32)
    p.add_argument("--eps", type=float, default=bounds.DEFAULT_EPSILON)
    p.set_defaults(func=cmd_ecr, d=64, N=16, r_attn=0.0)

    p = sub.add_parser("classify", help="place an architecture in the triangle")
    _add_model_flags(p)
    p.add_argument("--taxonomy", help="name of a row in the 52-architecture table")
    p.add_argument("--state", type=_pair, help="state bits as 'intercept,slope' in T")
    p.add_argument("--flops", type=_pair, help="step FLOPs as 'intercept,slope' in T")
    p.add_argument("--strong-rec", dest="strong_rec", action="store_true")
    p.set_defaults(func=cmd_classify, N=16, r_attn=None)

    p = sub.add_parser("taxonomy", help="print the 52-architecture classification")
    p.add_argument("--format", choices=("csv", "table"), default="table")
    p.add_argument("--out")
    p.set_defaults(func=cmd_taxonomy)

    p = sub.add_parser("train", help="train one model on one (n, T) and save a checkpoint")
    _add_model_flags(p)
    p.add_argument("--config", help="key = value settings file")
    p.add_argument("--n", type=int)
    p.add_argument("--T", type=int)
    p.add_argument("--profile", choices=("full", "fast"))
    p.add_argument("--steps", dest="total_steps", type=int)
    p.add_argument("--lr", dest="lr_peak", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--instances", type=int)
    p.add_argument("--outdir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a saved checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--n", type=int)
    p.add_argument("--T", type=int)
    p.add_argument("--V", type=int, default=32)
    p.add_argument("--instances", type=int, default=200)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", help="run exp1..exp5 or all, writing results and a manifest")
    p.add_argument("name", choices=experiments.EXPERIMENTS + ("all",))
    p.add_argument("--config")
    p.add_argument("--profile", choices=("full", "fast"))
    p.add_argument("--outdir")
    p.add_argument("--workers", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", dest="total_steps", type=int, help="override training steps (smoke runs)")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("oracle", help="exact information-inequality checks on random finite processors")
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--max-state-bits", dest="max_state_bits", type=int, default=10)
    p.add_argument("--max-V", dest="max_V", type=int, default=4)
    p.add_argument("--max-n", dest="max_n", type=int, default=4)
    p.add_argument("--out")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("plot", help="render a figure from a rows or summary CSV")
    p.add_argument("--rows", required=True)
    p.add_argument("--figure", choices=figures.FIGURES, required=True)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(asctime)s %(message)s")
    try:
        return args.func(args)
    except experiments.TheoremViolation as exc:
        print(f"THEOREM VIOLATION: {exc}", file=sys.stderr)
        return EXIT_VIOLATION
    except (UsageError, ConfigError, TaskConfigError, TrainConfigError, bounds.BoundDomainError,
            bounds.ClassificationError, figures.FigureDataError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
