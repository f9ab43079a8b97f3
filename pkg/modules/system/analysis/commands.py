# modules/system/analysis/commands.py
import logging
from pathlib import Path
from typing import Any, Dict

from core.artifacts import ArtifactWriter, read_json
from core.config import RunConfig
from core.constants import Method
from core.exceptions import ArtifactError, ConfigError
from modules.system.analysis.main import (
    PREDICTOR_NOTE, ablation_experiment, correlation_experiment, correlation_summary,
    interaction_probe, pitfall_probe,
)
from modules.system.search.commands import finetune_config
from modules.system.search.main import SearchConfig, run_search
from modules.system.search.workspace import Workspace, load_supernet, prepare
from modules.system.supernet.main import policy_from_dict

logger = logging.getLogger('analysis')


def _searched(config: RunConfig, method: str) -> Workspace:
    ws = prepare(config.replace(method=method))
    run_search(ws.supernet, ws.train, ws.val,
               SearchConfig.from_run_config(ws.config, ws.budget))
    return ws


def _from_artifacts(config: RunConfig):
    if not config.artifacts:
        raise ArtifactError("'artifacts' must point to a finished search directory")
    directory = Path(config.artifacts)
    checkpoint = directory / "supernet.ckpt"
    if not checkpoint.exists():
        raise ArtifactError(f"Missing artifact: {checkpoint}")
    document = read_json(directory, "policy")
    ws = prepare(config)
    load_supernet(checkpoint, ws.supernet)
    return ws, policy_from_dict(document), document.get("method")


def cmd_correlation(kernel, config: RunConfig) -> Dict[str, Any]:
    """Tau для SMPQ и DMPQ по нескольким сидам"""
    taus_smpq, taus_dmpq, rows = [], [], []
    probe = finetune_config(config, config.probe_epochs, "probe")
    for seed in config.analysis_seeds:
        seeded = config.replace(seed=seed)
        smpq = _searched(seeded, Method.SMPQ.value)
        dmpq = _searched(seeded, Method.DMPQ.value)
        result = correlation_experiment(smpq.supernet, dmpq.supernet, config.analysis_k,
                                        smpq.train, smpq.val, probe,
                                        seeded.seed_for("policies"), config.threads)
        taus_smpq.append(result.tau_smpq)
        taus_dmpq.append(result.tau_dmpq)
        rows.extend(result.rows(seed))

    writer = ArtifactWriter(config.out, config)
    writer.write_table("correlation.csv", rows)
    summary = correlation_summary(taus_smpq, taus_dmpq, config.analysis_seeds, config.analysis_k)
    writer.write_json("correlation.json", summary)
    return summary


def cmd_pitfall(kernel, config: RunConfig) -> Dict[str, Any]:
    """Проба alpha на ребре (probe_layer, probe_kind) по артефактам DMPQ"""
    ws, policy, method = _from_artifacts(config)
    if method != Method.DMPQ.value:
        logger.warning(f"Pitfall probe runs on a '{method}' search, expected 'dmpq'")
    report = pitfall_probe(ws.supernet, config.probe_layer, config.probe_kind, ws.train, ws.val,
                           finetune_config(config, config.probe_epochs, "probe"), policy,
                           config.threads)

    writer = ArtifactWriter(config.out, config)
    writer.write_table("pitfall.csv", report.rows, ["bit", "alpha", "accuracy"])
    summary = {
        "layer": report.layer,
        "kind": report.kind,
        "tau": report.tau,
        "rank_consistent": report.rank_consistent,
        "rows": len(report.rows),
        "predictor": PREDICTOR_NOTE,
    }
    writer.write_json("pitfall.json", summary)
    return summary


def cmd_interaction(kernel, config: RunConfig) -> Dict[str, Any]:
    """B0..B3 для двух правок из конфигурации (edits)"""
    if not config.edits or len(config.edits) != 2:
        raise ConfigError("'edits' must list exactly two {layer, kind, bit} entries")
    try:
        edits = [(int(e["layer"]), str(e["kind"]), int(e["bit"])) for e in config.edits]
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"Malformed edit: {e}")

    ws, policy, _ = _from_artifacts(config)
    result = interaction_probe(ws.supernet, policy, edits, ws.train, ws.val,
                               finetune_config(config, config.probe_epochs, "probe"),
                               config.threads)

    writer = ArtifactWriter(config.out, config)
    writer.write_table("interaction.csv", [
        {"variant": name, "accuracy": acc} for name, acc in result.accuracies.items()])
    summary = {
        "edits": [list(e) for e in edits],
        "accuracies": result.accuracies,
        "delta_b1": result.delta_b1,
        "delta_b2": result.delta_b2,
        "delta_b3": result.delta_b3,
        "gap": result.gap,
    }
    writer.write_json("interaction.json", summary)
    return summary


def cmd_ablation(kernel, config: RunConfig) -> Dict[str, Any]:
    """Перебор M, порога усечения или сетки (beta, xi)"""
    base = prepare(config)
    cfg = SearchConfig.from_run_config(config.replace(method=Method.SMPQ.value), base.budget)
    rows = ablation_experiment(
        config.ablation_kind, config.ablation_values,
        lambda: prepare(config).supernet,
        base.train, base.val, cfg, finetune_config(config), base.budget)

    writer = ArtifactWriter(config.out, config)
    writer.write_table("ablation.csv", rows)
    best = max(rows, key=lambda row: row["val_accuracy"])
    summary = {"kind": config.ablation_kind, "runs": len(rows), "best": best}
    writer.write_json("ablation.json", summary)
    return summary
