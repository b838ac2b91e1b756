"""Experiment harness: repeated train/evaluate runs per user under the
population or personalized protocol, with reproducible per-run seeds and
CSV/JSON report export."""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import SubjectDataset, personalized_split, population_split
from .errors import ArgumentError, StateError
from .models import ArchConfig, build_model
from .optim import TrainConfig, train
from .tensor import Rng, derive_seed

PROTOCOLS = ("population", "personalized")


def accuracy(preds, labels) -> float:
    if len(preds) == 0 or len(preds) != len(labels):
        raise ArgumentError(f"accuracy: got {len(preds)} predictions for "
                            f"{len(labels)} labels")
    hits = sum(1 for p, y in zip(preds, labels) if p == y)
    return hits / len(preds)


@dataclass
class RunRecord:
    """Per-(user, repetition) evaluation detail: probabilities per test
    window, enough to recompute any restricted accuracy afterwards."""

    user: int
    rep: int
    seed: int
    labels: list[int]
    probs: np.ndarray  # [n_windows, n_classes]

    @property
    def preds(self) -> list[int]:
        return [int(i) for i in np.argmax(self.probs, axis=1)]

    def accuracy(self) -> float:
        return accuracy(self.preds, self.labels)


def restricted_pair_accuracy(records: list[RunRecord], pair: tuple[int, int]) -> float:
    """Binary accuracy on windows of the two given classes, with the argmax
    restricted to those classes' probabilities."""
    a, b = pair
    hits = 0
    total = 0
    for rec in records:
        for label, p in zip(rec.labels, rec.probs):
            if label not in (a, b):
                continue
            pred = a if p[a] >= p[b] else b
            hits += pred == label
            total += 1
    if total == 0:
        raise ArgumentError(f"no test windows with labels {pair}")
    return hits / total


@dataclass
class ExperimentReport:
    protocol: str
    model: str
    repetitions: int
    base_seed: int
    config_hash: str
    users: list[int] = field(default_factory=list)
    accuracies: dict[int, list[float]] = field(default_factory=dict)
    run_seeds: dict[int, list[int]] = field(default_factory=dict)

    def per_user_mean(self, user: int) -> float:
        accs = self.accuracies[user]
        return sum(accs) / len(accs)

    @property
    def overall_mean(self) -> float:
        return sum(self.per_user_mean(u) for u in self.users) / len(self.users)

    def to_json_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "model": self.model,
            "repetitions": self.repetitions,
            "base_seed": self.base_seed,
            "config_hash": self.config_hash,
            "users": [
                {
                    "user": u,
                    "accuracies": self.accuracies[u],
                    "seeds": self.run_seeds[u],
                    "mean": self.per_user_mean(u),
                }
                for u in self.users
            ],
            "overall_mean": self.overall_mean,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "ExperimentReport":
        report = cls(protocol=doc["protocol"], model=doc["model"],
                     repetitions=doc["repetitions"], base_seed=doc["base_seed"],
                     config_hash=doc["config_hash"])
        for entry in doc["users"]:
            u = entry["user"]
            report.users.append(u)
            report.accuracies[u] = list(entry["accuracies"])
            report.run_seeds[u] = list(entry["seeds"])
        return report


def _single_run(protocol: str, model_kind: str, datasets: list[SubjectDataset],
                user: int, rep: int, base_seed: int, arch: ArchConfig,
                cfg: TrainConfig) -> RunRecord:
    seed = derive_seed(base_seed, user, rep)
    rng = Rng(seed)
    if protocol == "population":
        train_windows, test_windows = population_split(datasets, user)
        leaked = [w for w in train_windows if w.subject_id == user]
        if leaked:
            raise StateError(f"population split leaked {len(leaked)} windows of "
                             f"subject {user} into training")
    else:
        subject = next(d for d in datasets if d.subject_id == user)
        train_windows, test_windows = personalized_split(subject)
    model = build_model(model_kind, arch, cfg.dropout_rate, rng)
    train(model, [(w.readings, w.label) for w in train_windows], cfg, rng)
    probs = np.stack([model.forward(w.readings)[0] for w in test_windows])
    labels = [w.label for w in test_windows]
    return RunRecord(user=user, rep=rep, seed=seed, labels=labels, probs=probs)


def run_experiment(protocol: str, model_kind: str, datasets: list[SubjectDataset],
                   repetitions: int = 10, base_seed: int = 0,
                   arch: ArchConfig | None = None,
                   train_cfg: TrainConfig | None = None,
                   jobs: int = 1, config_hash: str = ""):
    """Train and evaluate per (user, repetition); returns (report, records).

    Every run is seeded by derive_seed(base_seed, user, rep), covering both
    initialization and data order, so the whole table reproduces from one
    seed regardless of `jobs`.
    """
    if protocol not in PROTOCOLS:
        raise ArgumentError(f"unknown protocol {protocol!r}: choose from {PROTOCOLS}")
    if repetitions < 1:
        raise ArgumentError("repetitions must be >= 1")
    if not datasets:
        raise ArgumentError("run_experiment: no datasets")
    arch = arch or ArchConfig()
    train_cfg = train_cfg or TrainConfig()
    users = [d.subject_id for d in datasets]
    tasks = [(user, rep) for user in users for rep in range(repetitions)]

    def run(task):
        user, rep = task
        return _single_run(protocol, model_kind, datasets, user, rep,
                           base_seed, arch, train_cfg)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(run, tasks))
    else:
        records = [run(t) for t in tasks]

    report = ExperimentReport(protocol=protocol, model=model_kind,
                              repetitions=repetitions, base_seed=base_seed,
                              config_hash=config_hash, users=users)
    for user in users:
        per_user = [r for r in records if r.user == user]
        per_user.sort(key=lambda r: r.rep)
        report.accuracies[user] = [r.accuracy() for r in per_user]
        report.run_seeds[user] = [r.seed for r in per_user]
    return report, records


def report_export(report: ExperimentReport, path, format: str) -> None:
    """Write a report as CSV (rows plus a summary block) or JSON."""
    if format == "json":
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(report.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
    elif format == "csv":
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("model,protocol,user,rep,accuracy\n")
            for user in report.users:
                for rep, acc in enumerate(report.accuracies[user]):
                    fh.write(f"{report.model},{report.protocol},{user},{rep},{acc!r}\n")
            for user in report.users:
                fh.write(f"{report.model},{report.protocol},{user},mean,"
                         f"{report.per_user_mean(user)!r}\n")
            fh.write(f"{report.model},{report.protocol},overall,mean,"
                     f"{report.overall_mean!r}\n")
    else:
        raise ArgumentError(f"unknown report format {format!r}: choose csv or json")


def load_report_json(path) -> ExperimentReport:
    with open(path, encoding="utf-8") as fh:
        return ExperimentReport.from_json_dict(json.load(fh))
