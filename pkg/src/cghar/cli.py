"""Command-line entry point.

Subcommands: gen-data, train, experiment, gradcheck, embed. Runs are driven
by a single strict JSON config file; every command is deterministic given its
config and seed, and writes only under the configured output directory.

Exit codes: 0 success, 1 usage/config error, 2 runtime/numeric failure.
Set CGH_LOG=error|info|debug to control diagnostics on stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path

from . import __version__
from .data import (MotifSpec, default_motif_spec, ingest_csv, synth_generate,
                   write_dataset_csv, ACTIVITY_NAMES)
from .errors import ArgumentError, CghError, ConfigError
from .evaluate import report_export, run_experiment
from .gradcheck import LAYER_ORDER, TOLERANCE, run_suite, suite_passes
from .kernels import backend_name
from .models import (REFERENCE_PARAM_COUNT, ArchConfig, build_model,
                     count_parameters, load_checkpoint, memory_footprint_bits,
                     save_checkpoint)
from .optim import TrainConfig, train, trace_to_csv
from .tensor import Rng, derive_seed
from .tsne import STATE_NAMES, export_states

log = logging.getLogger("cghar")


@dataclass
class DataSource:
    kind: str  # "synthetic" | "csv"
    path: str | None = None       # csv file
    spec_path: str | None = None  # motif spec json; None means the shipped default
    subjects: int = 9
    windows_per_class: int = 20

    def load(self, seed: int):
        if self.kind == "csv":
            return ingest_csv(self.path)
        spec = (MotifSpec.load(self.spec_path) if self.spec_path
                else default_motif_spec())
        return synth_generate(spec, self.subjects, self.windows_per_class, Rng(seed))


@dataclass
class RunConfig:
    models: list[str]
    data: DataSource
    arch: ArchConfig
    train: TrainConfig
    protocol: str = "personalized"
    repetitions: int = 10
    seed: int = 0
    out_dir: str = "out"

    def canonical_json(self) -> str:
        doc = {
            "models": self.models,
            "data": vars(self.data),
            "arch": self.arch.to_dict(),
            "train": vars(self.train),
            "protocol": self.protocol,
            "repetitions": self.repetitions,
            "seed": self.seed,
            "out_dir": self.out_dir,
        }
        return json.dumps(doc, sort_keys=True)

    def hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]


def _reject_unknown(doc: dict, allowed: set[str], where: str):
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")


def load_run_config(path, *, seed_override=None, out_override=None) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    _reject_unknown(doc, {"model", "models", "data", "arch", "train", "protocol",
                          "repetitions", "seed", "out_dir"}, str(path))

    models = doc.get("models")
    if models is None:
        models = [doc["model"]] if "model" in doc else []
    if not isinstance(models, list) or not models:
        raise ConfigError(f"{path}: provide 'model' or a non-empty 'models' list")
    for m in models:
        if m not in ("full", "trimmed", "logreg"):
            raise ConfigError(f"{path}: unknown model kind {m!r}")

    data_doc = doc.get("data", {"kind": "synthetic"})
    _reject_unknown(data_doc, {"kind", "path", "spec_path", "subjects",
                               "windows_per_class"}, f"{path}: data")
    kind = data_doc.get("kind")
    if kind not in ("synthetic", "csv"):
        raise ConfigError(f"{path}: data.kind must be 'synthetic' or 'csv'")
    if kind == "csv":
        csv_path = data_doc.get("path")
        if not csv_path or not Path(csv_path).exists():
            raise ConfigError(f"{path}: data.path does not exist: {csv_path}")
    spec_path = data_doc.get("spec_path")
    if spec_path is not None and not Path(spec_path).exists():
        raise ConfigError(f"{path}: data.spec_path does not exist: {spec_path}")
    source = DataSource(kind=kind, path=data_doc.get("path"), spec_path=spec_path,
                        subjects=int(data_doc.get("subjects", 9)),
                        windows_per_class=int(data_doc.get("windows_per_class", 20)))

    arch_doc = doc.get("arch", {})
    try:
        arch = ArchConfig.from_dict({**ArchConfig().to_dict(), **arch_doc})
    except (ArgumentError, TypeError) as exc:
        raise ConfigError(f"{path}: arch: {exc}") from exc

    train_doc = doc.get("train", {})
    _reject_unknown(train_doc, {f.name for f in fields(TrainConfig)}, f"{path}: train")
    try:
        train_cfg = TrainConfig(**train_doc)
    except ArgumentError as exc:
        raise ConfigError(f"{path}: train: {exc}") from exc

    protocol = doc.get("protocol", "personalized")
    if protocol not in ("population", "personalized"):
        raise ConfigError(f"{path}: unknown protocol {protocol!r}")

    cfg = RunConfig(models=models, data=source, arch=arch, train=train_cfg,
                    protocol=protocol,
                    repetitions=int(doc.get("repetitions", 10)),
                    seed=int(doc.get("seed", 0)),
                    out_dir=str(doc.get("out_dir", "out")))
    if cfg.repetitions < 1:
        raise ConfigError(f"{path}: repetitions must be >= 1")
    if seed_override is not None:
        cfg.seed = int(seed_override)
    if out_override is not None:
        cfg.out_dir = str(out_override)
    return cfg


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args) -> int:
    spec = MotifSpec.load(args.spec) if args.spec else default_motif_spec()
    datasets = synth_generate(spec, args.subjects, args.windows_per_class,
                              Rng(args.seed))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset_csv(datasets, out)
    print(f"wrote {out}")
    for ds in datasets:
        counts = " ".join(f"{ACTIVITY_NAMES[c]}={len(ws)}"
                          for c, ws in sorted(ds.windows_by_class.items()))
        print(f"subject {ds.subject_id}: {counts}")
    return 0


def cmd_train(args) -> int:
    cfg = load_run_config(args.config, seed_override=args.seed,
                          out_override=args.out)
    if len(cfg.models) != 1:
        raise ConfigError("train: config must name exactly one model")
    kind = cfg.models[0]
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    datasets = cfg.data.load(derive_seed(cfg.seed, "data"))
    windows = [w for ds in datasets for w in ds.all_windows()]
    pairs = [(w.readings, w.label) for w in windows]
    log.info("training %s on %d windows (backend=%s)", kind, len(pairs), backend_name())

    rng = Rng(derive_seed(cfg.seed, "train", kind))
    model = build_model(kind, cfg.arch, cfg.train.dropout_rate, rng)
    rows = train(model, pairs, cfg.train, rng)

    preds = [model.predict(x) for x, _ in pairs]
    final_acc = sum(int(p == y) for p, (_, y) in zip(preds, pairs)) / len(pairs)

    n_params = count_parameters(model)
    save_checkpoint(model, out_dir / "checkpoint.cgh",
                    meta={"seed": cfg.seed, "epochs": cfg.train.max_iterations,
                          "l2_strength": cfg.train.l2_strength})
    trace_to_csv(rows, out_dir / "loss_trace.csv")
    summary = {
        "model": kind,
        "arch": cfg.arch.to_dict(),
        "parameter_count": n_params,
        "memory_footprint_bits": memory_footprint_bits(model),
        "reference_parameter_count": REFERENCE_PARAM_COUNT,
        "parameter_count_minus_reference": n_params - REFERENCE_PARAM_COUNT,
        "final_train_accuracy": final_acc,
        "seed": cfg.seed,
        "epochs": cfg.train.max_iterations,
        "l2_strength": cfg.train.l2_strength,
        "config_hash": cfg.hash(),
    }
    with open(out_dir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"trained {kind}: {n_params} parameters "
          f"({memory_footprint_bits(model)} bits at 32-bit storage; "
          f"reference full-scale count {REFERENCE_PARAM_COUNT}, "
          f"diff {n_params - REFERENCE_PARAM_COUNT:+d})")
    print(f"final train accuracy {final_acc:.4f}; outputs in {out_dir}")
    return 0


def cmd_experiment(args) -> int:
    cfg = load_run_config(args.config, seed_override=args.seed,
                          out_override=args.out)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    datasets = cfg.data.load(derive_seed(cfg.seed, "data"))
    users = [d.subject_id for d in datasets]
    print(f"protocol={cfg.protocol} repetitions={cfg.repetitions} "
          f"users={len(users)} seed={cfg.seed} backend={backend_name()}")

    reports = {}
    for kind in cfg.models:
        log.info("running %s/%s experiment", kind, cfg.protocol)
        report, _ = run_experiment(cfg.protocol, kind, datasets,
                                   repetitions=cfg.repetitions,
                                   base_seed=cfg.seed, arch=cfg.arch,
                                   train_cfg=cfg.train, jobs=args.jobs,
                                   config_hash=cfg.hash())
        reports[kind] = report
        base = out_dir / f"report_{kind}_{cfg.protocol}"
        report_export(report, base.with_suffix(".csv"), "csv")
        report_export(report, base.with_suffix(".json"), "json")

    header = ["model"] + [f"user{u}" for u in users] + ["mean"]
    print("  ".join(f"{h:>10}" for h in header))
    for kind, report in reports.items():
        cells = [f"{report.per_user_mean(u):.4f}" for u in report.users]
        cells.append(f"{report.overall_mean:.4f}")
        print("  ".join(f"{c:>10}" for c in [kind] + cells))
    print(f"reports written to {out_dir}")
    return 0


def cmd_gradcheck(args) -> int:
    results = run_suite(seed=args.seed, instances=args.instances)
    for name in LAYER_ORDER:
        err = results[name]
        status = "PASS" if err < TOLERANCE else "FAIL"
        print(f"{name:>10}: worst relative error {err:.3e}  {status}")
    if not suite_passes(results):
        print(f"gradient check FAILED (tolerance {TOLERANCE})", file=sys.stderr)
        return 2
    return 0


def cmd_embed(args) -> int:
    model, meta = load_checkpoint(args.checkpoint)
    if model.kind != "full":
        raise ConfigError(f"checkpoint holds a {model.kind!r} model, which has no "
                          "recurrent states; embedding needs the full model")
    datasets = ingest_csv(args.data)
    windows = [w for ds in datasets for w in ds.all_windows()]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    coords, labels = export_states(model, windows, args.which, out,
                                   perplexity=args.perplexity,
                                   iterations=args.iterations, seed=args.seed)
    print(f"embedded {len(labels)} {args.which} states to {out}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    class Parser(argparse.ArgumentParser):
        def error(self, message):  # usage errors exit 1, not argparse's 2
            self.print_usage(sys.stderr)
            raise ConfigError(message)

    parser = Parser(prog="cghar",
                    description="Composite human activity detection toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic accelerometer CSV")
    p.add_argument("--spec", default=None, help="motif spec JSON (default: shipped spec)")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--subjects", type=int, default=9)
    p.add_argument("--windows-per-class", type=int, default=20,
                   help="15 s windows per (subject, class); 20 = 5 minutes")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one model from a run config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--out", default=None, help="override config out_dir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("experiment", help="run a population/personalized experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--out", default=None, help="override config out_dir")
    p.add_argument("--jobs", type=int, default=1,
                   help="parallel (user, repetition) runs")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("gradcheck", help="finite-difference check of every layer")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=20)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("embed", help="t-SNE export of recurrent states")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="accelerometer CSV")
    p.add_argument("--which", required=True,
                   help=f"state to embed, one of {{{', '.join(STATE_NAMES)}}}")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--perplexity", type=float, default=30.0)
    p.add_argument("--iterations", type=int, default=1000)
    p.set_defaults(func=cmd_embed)
    return parser


def _setup_logging():
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    name = os.environ.get("CGH_LOG", "info").strip().lower()
    if name not in levels:
        print(f"warning: CGH_LOG={name!r} not in {sorted(levels)}, using info",
              file=sys.stderr)
        name = "info"
    logging.basicConfig(level=levels[name],
                        format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)


def main(argv=None) -> int:
    _setup_logging()
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "embed" and args.which not in STATE_NAMES:
            raise ConfigError(f"--which must be one of "
                              f"{{{', '.join(STATE_NAMES)}}}, got {args.which!r}")
        return args.func(args)
    except (ConfigError, ArgumentError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except CghError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
