"""Command-line entry point.

Subcommands:
  gen     build a synthetic multi-domain fixture file
  run     execute one federated experiment and emit its report
  ablate  run the five-row component-removal lattice
  sweep   grid over one hyperparameter (alpha, beta, experts, tokens)
  comm    print the per-client per-round communicated parameter count

Configuration precedence: JSON config file, then preset, then explicit flags.
``TRIP_SIM_THREADS`` caps sweep/ablate worker parallelism (default 1).
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

from .config import AblationFlags, ConfigError, ExperimentConfig, preset
from .data import GeneratorConfig, GeneratorConfigError, generate, save_fixture
from .federation import run as run_experiment
from .report import emit_report

SWEEP_PARAMS = {
    "train-alpha": ("train_alpha", float),
    "inference-alpha": ("inference_alpha", float),
    "beta": ("beta", float),
    "experts": ("experts", int),
    "tokens": ("prompt_tokens", int),
}

ABLATION_LATTICE = [
    ("full", AblationFlags()),
    ("no_capacity", AblationFlags(no_capacity=True)),
    ("no_keys", AblationFlags(no_capacity=True, no_static_keys=True)),
    ("no_cluster", AblationFlags(no_capacity=True, no_static_keys=True,
                                 random_assignment=True)),
    ("no_kl", AblationFlags(no_capacity=True, no_static_keys=True,
                            random_assignment=True, no_kl=True)),
]


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON experiment config file")
    p.add_argument("--preset", choices=["trip", "trip-lite"], help="size preset")
    p.add_argument("--experts", type=int)
    p.add_argument("--prompt-tokens", type=int, dest="prompt_tokens")
    p.add_argument("--dims", type=int)
    p.add_argument("--rounds", type=int)
    p.add_argument("--epochs", type=int, dest="local_epochs")
    p.add_argument("--beta", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--train-alpha", type=float, dest="train_alpha")
    p.add_argument("--inference-alpha", type=float, dest="inference_alpha")
    p.add_argument("--key-strategy", dest="key_strategy",
                   choices=["uniform", "normal", "binary", "orthogonal"])
    p.add_argument("--target-domain", dest="target_domain")
    p.add_argument("--fixture", dest="fixture_path", help="dataset fixture file")
    p.add_argument("--seed-data", type=int, dest="seed_data")
    p.add_argument("--seed-model", type=int, dest="seed_model")
    p.add_argument("--seed-clustering", type=int, dest="seed_clustering")
    p.add_argument("--no-capacity", action="store_true")
    p.add_argument("--no-static-keys", action="store_true")
    p.add_argument("--random-assignment", action="store_true")
    p.add_argument("--no-kl", action="store_true")


_CONFIG_FIELDS = ("experts", "prompt_tokens", "dims", "rounds", "local_epochs",
                  "beta", "lr", "batch_size", "train_alpha", "inference_alpha",
                  "key_strategy", "target_domain", "fixture_path",
                  "seed_data", "seed_model", "seed_clustering")


def _build_config(args: argparse.Namespace) -> ExperimentConfig:
    base: dict = {}
    if args.config:
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                base = json.load(fh)
        except OSError as exc:
            raise ConfigError([f"config: cannot read '{args.config}': {exc}"])
        except json.JSONDecodeError as exc:
            raise ConfigError([f"config: '{args.config}' is not valid JSON: {exc}"])
        if not isinstance(base, dict):
            raise ConfigError([f"config: '{args.config}' must hold a JSON object"])
    if args.preset:
        base.update(preset(args.preset))
    for name in _CONFIG_FIELDS:
        value = getattr(args, name, None)
        if value is not None:
            base[name] = value
    flags = {k: bool(getattr(args, k)) for k in
             ("no_capacity", "no_static_keys", "random_assignment", "no_kl")
             if getattr(args, k, False)}
    if flags:
        existing = base.get("ablation") or {}
        if isinstance(existing, AblationFlags):
            existing = {f: getattr(existing, f) for f in flags}
        base["ablation"] = {**existing, **flags}
    cfg = ExperimentConfig.from_dict(base)
    cfg.validate()
    return cfg


def _cmd_gen(args: argparse.Namespace) -> int:
    kwargs = {}
    for name in ("classes", "dims", "tokens_per_image", "regions",
                 "samples_per_class", "seed", "anchor_seed"):
        value = getattr(args, name)
        if value is not None:
            kwargs[name] = value
    cfg = GeneratorConfig(**kwargs)
    if args.noise_sigma is not None:
        cfg = replace(cfg, domains=tuple(replace(d, noise_sigma=args.noise_sigma)
                                         for d in cfg.domains))
    dataset = generate(cfg)
    save_fixture(dataset, cfg, args.out)
    n = sum(len(v) for v in dataset.values())
    print(f"wrote {n} samples across {len(dataset)} domains to {args.out}")
    return 0


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    if args.comm_only:
        print(f"parameters/round/client: {cfg.params_per_client_round}")
        return 0
    report = run_experiment(cfg)
    paths = emit_report(report, args.out)
    print(f"zero-shot target accuracy: {report.zero_shot[cfg.target_domain]:.4f}")
    print(f"final target accuracy:     {report.final_target_accuracy:.4f}")
    print(f"uplink parameters/round/client: {cfg.params_per_client_round}")
    print(f"report: {paths['report.json']}")
    return 0


def _workers() -> int:
    raw = os.environ.get("TRIP_SIM_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError([f"TRIP_SIM_THREADS: not an integer: '{raw}'"])


def _run_grid(jobs: list[tuple[str, ExperimentConfig]], out_dir: str):
    """Run labelled configs, each into its own subdirectory."""
    def one(job):
        label, cfg = job
        report = run_experiment(cfg)
        emit_report(report, os.path.join(out_dir, label))
        return label, report

    workers = min(_workers(), len(jobs)) or 1
    if workers == 1:
        return [one(j) for j in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, jobs))


def _cmd_ablate(args: argparse.Namespace) -> int:
    base = _build_config(args)
    jobs = [(label, replace(base, ablation=flags)) for label, flags in ABLATION_LATTICE]
    results = _run_grid(jobs, args.out)

    lines = ["row,capacity,keys,cluster,kl_loss,target_accuracy"]
    print(f"{'row':<12} capacity keys cluster kl_loss  target_acc")
    for (label, report), (_, flags) in zip(results, ABLATION_LATTICE):
        marks = ["x" if f else "ok" for f in
                 (flags.no_capacity, flags.no_static_keys,
                  flags.random_assignment, flags.no_kl)]
        acc = report.final_target_accuracy
        lines.append(f"{label},{marks[0]},{marks[1]},{marks[2]},{marks[3]},{acc!r}")
        print(f"{label:<12} {marks[0]:<8} {marks[1]:<4} {marks[2]:<7} {marks[3]:<7}  {acc:.4f}")
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "ablation.csv"), "w", encoding="utf-8",
              newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    field_name, cast = SWEEP_PARAMS[args.param]
    try:
        values = [cast(v) for v in args.values.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError([f"values: {exc}"])
    if not values:
        raise ConfigError(["values: at least one grid point required"])
    base = _build_config(args)
    jobs = [(f"{args.param}_{v}", replace(base, **{field_name: v})) for v in values]
    results = _run_grid(jobs, args.out)

    lines = ["param,value,zero_shot_target,final_target_accuracy"]
    print(f"{'value':<12} zero_shot  final")
    for value, (label, report) in zip(values, results):
        zs = report.zero_shot[report.config["target_domain"]]
        lines.append(f"{args.param},{value!r},{zs!r},{report.final_target_accuracy!r}")
        print(f"{value!s:<12} {zs:<10.4f} {report.final_target_accuracy:.4f}")
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "sweep.csv"), "w", encoding="utf-8",
              newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return 0


def _cmd_comm(args: argparse.Namespace) -> int:
    print(args.experts * args.tokens * args.dims)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tripsim",
        description="Federated domain-generalization simulator with "
                    "token-level prompt-expert routing.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", help="generate a dataset fixture")
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--classes", type=int)
    p_gen.add_argument("--dims", type=int)
    p_gen.add_argument("--tokens-per-image", type=int, dest="tokens_per_image")
    p_gen.add_argument("--regions", type=int)
    p_gen.add_argument("--samples-per-class", type=int, dest="samples_per_class")
    p_gen.add_argument("--seed", type=int)
    p_gen.add_argument("--anchor-seed", type=int, dest="anchor_seed")
    p_gen.add_argument("--noise-sigma", type=float, dest="noise_sigma")
    p_gen.set_defaults(func=_cmd_gen)

    p_run = sub.add_parser("run", help="run one experiment")
    _add_config_flags(p_run)
    p_run.add_argument("--out", default="out")
    p_run.add_argument("--comm-only", action="store_true",
                       help="print the communication cost and exit")
    p_run.set_defaults(func=_cmd_run)

    p_abl = sub.add_parser("ablate", help="run the component-removal lattice")
    _add_config_flags(p_abl)
    p_abl.add_argument("--out", default="ablation")
    p_abl.set_defaults(func=_cmd_ablate)

    p_sweep = sub.add_parser("sweep", help="grid over one hyperparameter")
    _add_config_flags(p_sweep)
    p_sweep.add_argument("--param", required=True, choices=sorted(SWEEP_PARAMS))
    p_sweep.add_argument("--values", required=True,
                         help="comma-separated grid values")
    p_sweep.add_argument("--out", default="sweep")
    p_sweep.set_defaults(func=_cmd_sweep)

    p_comm = sub.add_parser("comm", help="parameter-count report")
    p_comm.add_argument("--experts", type=int, required=True)
    p_comm.add_argument("--tokens", type=int, required=True)
    p_comm.add_argument("--dims", type=int, required=True)
    p_comm.set_defaults(func=_cmd_comm)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ConfigError, GeneratorConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
