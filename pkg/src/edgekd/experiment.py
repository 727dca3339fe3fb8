"""Run any subset of the seven methods on one scenario and collect the views."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

from . import distill, ensemble, metrics
from .config import HyperParams
from .dataio import Scenario, dataset_stats
from .distill import CloudAudit, KdConfig
from .errors import ConfigError
from .federated import FedConfig, run_federated
from .metrics import MethodReport
from .nncore import ModelWeights

log = logging.getLogger(__name__)

METHODS = ("local", "fedavg", "dpfed", "kd_scr", "kd_smote", "tf_kd", "ensemble")


def resolve_methods(methods: Sequence[str]) -> list[str]:
    """Validate, add ensemble members when the ensemble is requested, put in canonical order."""
    wanted = set()
    for m in methods:
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r}; expected a subset of {list(METHODS)}")
        wanted.add(m)
    if not wanted:
        raise ConfigError("no methods requested")
    if "ensemble" in wanted:
        wanted.update(ensemble.MEMBERS)
    return [m for m in METHODS if m in wanted]


@dataclass
class ExperimentResult:
    methods: list[str]
    reports: dict[str, MethodReport]
    telemetry: dict[str, list[dict]] = field(default_factory=dict)
    teachers: dict[str, distill.TeacherResult] = field(default_factory=dict)
    global_models: dict[str, ModelWeights] = field(default_factory=dict)
    audit: CloudAudit = field(default_factory=CloudAudit)

    def ordered_reports(self) -> list[MethodReport]:
        return [self.reports[m] for m in self.methods]


def run_experiment(scenario: Scenario, hp: HyperParams, methods: Sequence[str], seed: int,
                   threads: int = 1) -> ExperimentResult:
    methods = resolve_methods(methods)
    fp = hp.fingerprint()
    kd_cfg = KdConfig.from_hyperparams(hp)
    result = ExperimentResult(methods, {})
    synthetic = None

    for m in methods:
        log.info("running %s", m)
        if m == "local":
            result.reports[m], _ = distill.run_local(scenario, kd_cfg, seed, threads, fp)
        elif m in ("fedavg", "dpfed"):
            cfg = FedConfig.from_hyperparams(hp, privacy="dp" if m == "dpfed" else "none")
            fed = run_federated(scenario, cfg, seed, threads=threads, method=m, fingerprint=fp)
            result.reports[m] = fed.report
            result.telemetry[m] = fed.telemetry
            result.global_models[m] = fed.global_model
        elif m in distill.VARIANTS:
            source = "real" if m == "kd_scr" else "smote"
            if source == "smote" and synthetic is None:
                synthetic = distill.device_smote(scenario, kd_cfg.smote, seed, threads)
            # kd_scr's teacher sees real rows by design; only the smote path is audited
            audit = result.audit if source == "smote" else CloudAudit()
            run = distill.run_kd_pipeline(scenario, m, kd_cfg, seed, threads=threads,
                                          teacher=result.teachers.get(source), synthetic=synthetic,
                                          audit=audit, fingerprint=fp)
            result.teachers[source] = run.teacher
            result.reports[m] = run.report
        elif m == "ensemble":
            result.reports[m] = ensemble.run_ensemble([result.reports[k] for k in ensemble.MEMBERS])
    return result


def summarize(scenario: Scenario, result: ExperimentResult, grouping="quartile") -> dict:
    """Tables for a run: accuracy summary, deltas against Local, error-rate groups."""
    reports = result.ordered_reports()
    out = {
        "stats": dataset_stats(scenario).to_dict(),
        "summary": metrics.summary_table(reports),
        "groups": metrics.groups_to_rows(metrics.error_rate_groups(scenario, reports, grouping)),
    }
    if "local" in result.reports:
        out["deltas"] = metrics.delta_tables(reports, result.reports["local"])
    return out
