"""Audit report assembly.

Emits a JSON report, a human-readable text rendering, one CSV per figure
analogue (adverse impact, effects by model, effects by condition,
agreement, AUC), and the ratings CSV. Every number is recomputable from
the cached exchanges plus the plan; volatile run statistics (cache hits,
wall time) go to a separate run_meta.json so the report itself is
byte-identical across cold, warm, and resumed runs.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

from .experiment import RatingsTable, RefusalRecord


def _csv_text(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def effects_csv(effects: list[dict]) -> str:
    header = [
        "model_id",
        "condition",
        "blinded",
        "term",
        "coef_raw",
        "coef_standardized",
        "se_clustered",
        "ci70_low",
        "ci70_high",
        "ci95_low",
        "ci95_high",
        "n_rows",
        "n_clusters",
    ]
    rows = []
    for entry in effects:
        for eff in entry.get("effects", []):
            rows.append(
                [
                    entry["model_id"],
                    entry["condition"],
                    int(entry["blinded"]),
                    eff["term"],
                    eff["coef_raw"],
                    eff["coef_standardized"],
                    eff["se_clustered"],
                    eff["ci70_low"],
                    eff["ci70_high"],
                    eff["ci95_low"],
                    eff["ci95_high"],
                    eff["n_rows"],
                    eff["n_clusters"],
                ]
            )
    return _csv_text(header, rows)


def adverse_impact_csv(impacts: list[dict]) -> str:
    header = [
        "model_id",
        "condition",
        "blinded",
        "attribute",
        "threshold",
        "group",
        "rate",
        "reference",
        "ratio",
        "flagged",
        "ci95_low",
        "ci95_high",
    ]
    rows = []
    for block in impacts:
        for section in block["analysis"]:
            if "groups" not in section:
                continue
            for group, entry in sorted(section["groups"].items()):
                rows.append(
                    [
                        block["model_id"],
                        block["condition"],
                        int(block["blinded"]),
                        section["attribute"],
                        section["threshold"],
                        group,
                        entry["rate"],
                        section["reference"],
                        entry["ratio"],
                        int(entry["flagged"]),
                        entry["ci95_low"],
                        entry["ci95_high"],
                    ]
                )
    return _csv_text(header, rows)


def agreement_csv(matrices: dict[str, dict]) -> str:
    header = ["model_id", "attribute", "intended", "perceived", "count", "rate"]
    rows = []
    for model_id in sorted(matrices):
        for attribute in ("gender", "race"):
            m = matrices[model_id][attribute]
            for i, intended in enumerate(m["row_labels"]):
                for j, perceived in enumerate(m["col_labels"]):
                    rows.append(
                        [
                            model_id,
                            attribute,
                            intended,
                            perceived,
                            m["counts"][i][j],
                            m["rates"][i][j],
                        ]
                    )
    return _csv_text(header, rows)


def auc_csv(predictability: list[dict]) -> str:
    header = ["redaction", "materials", "attribute", "auc", "pooled_auc", "penalty", "n"]
    rows = [
        [
            e["redaction"],
            e["materials"],
            e["attribute"],
            e.get("auc"),
            e.get("pooled_auc"),
            e.get("penalty"),
            e["n"],
        ]
        for e in predictability
    ]
    return _csv_text(header, rows)


def refusal_summary(refusals: list[RefusalRecord]) -> dict:
    by_model: dict[str, dict] = {}
    for r in refusals:
        slot = by_model.setdefault(r.model_id, {"total": 0, "by_code": {}, "by_cell": {}})
        slot["total"] += 1
        slot["by_code"][r.error_code] = slot["by_code"].get(r.error_code, 0) + 1
        slot["by_cell"][r.cell] = slot["by_cell"].get(r.cell, 0) + 1
    return by_model


def render_text_report(report: dict) -> str:
    lines = ["Audit report", "=" * 60, ""]
    run = report.get("run", {})
    lines.append(f"Master seed: {run.get('master_seed')}")
    lines.append(f"Planned elicitations: {run.get('planned')}")
    lines.append(f"Rows collected: {run.get('rows')}")
    lines.append(f"Refusals / parse failures: {run.get('refusal_count')}")
    lines.append("")

    effects = report.get("effects", [])
    if effects:
        lines.append("Standardized effects (reference: male, White)")
        lines.append("-" * 60)
        for entry in effects:
            label = f"{entry['model_id']} / {entry['condition']}"
            if entry.get("blinded"):
                label += " / blinded"
            lines.append(label)
            for eff in entry.get("effects", []):
                lines.append(
                    f"  {eff['term']:<10} {eff['coef_standardized']:+.3f} SD"
                    f"  (95% CI {eff['ci95_low']:+.3f} to {eff['ci95_high']:+.3f},"
                    f" n={eff['n_rows']}, clusters={eff['n_clusters']})"
                )
            if "error" in entry:
                lines.append(f"  estimation failed: {entry['error']}")
            lines.append("")

    impacts = report.get("adverse_impact", [])
    if impacts:
        lines.append("Adverse impact ratios (most-favored reference)")
        lines.append("-" * 60)
        for block in impacts:
            label = f"{block['model_id']} / {block['condition']}"
            if block.get("blinded"):
                label += " / blinded"
            lines.append(label)
            for section in block["analysis"]:
                if "groups" not in section:
                    lines.append(
                        f"  {section['attribute']} t>={section['threshold']}:"
                        f" unavailable ({section.get('error')})"
                    )
                    continue
                for group, e in sorted(section["groups"].items()):
                    flag = "  FLAG" if e["flagged"] else ""
                    ci = ""
                    if e["ci95_low"] is not None:
                        ci = f" [{e['ci95_low']:.3f}, {e['ci95_high']:.3f}]"
                    lines.append(
                        f"  {section['attribute']} t>={section['threshold']}"
                        f" {group:<10} rate={e['rate']:.3f}"
                        f" ratio={e['ratio']:.3f}{ci}{flag}"
                    )
            lines.append("")

    manip = report.get("manipulation", {})
    if manip.get("matrices"):
        lines.append("Manipulation check agreement")
        lines.append("-" * 60)
        for model_id in sorted(manip["matrices"]):
            m = manip["matrices"][model_id]
            lines.append(
                f"  {model_id}: gender agreement {m['gender']['agreement']:.3f},"
                f" race agreement {m['race']['agreement']:.3f}"
            )
        lines.append("")

    pred = report.get("predictability", [])
    if pred:
        lines.append("Race/gender predictability from materials (CV AUC)")
        lines.append("-" * 60)
        for e in pred:
            auc = f"{e['auc']:.3f}" if e.get("auc") is not None else f"error: {e.get('error')}"
            lines.append(
                f"  {e['redaction']:<11} {e['materials']:<11} {e['attribute']:<14} {auc}"
            )
        lines.append("")

    return "\n".join(lines) + "\n"


def assemble_report(
    output_dir: str | Path,
    run_meta: dict,
    table: RatingsTable | None = None,
    refusals: list[RefusalRecord] | None = None,
    analysis: dict | None = None,
    blinding: dict | None = None,
    manipulation: dict | None = None,
    predictability: list[dict] | None = None,
    volatile: dict | None = None,
) -> dict:
    """Write report.json, report.txt, figures/*.csv, ratings.csv.

    ``run_meta`` must contain only reproducible values (seeds, counts);
    ``volatile`` (cache statistics, timings) goes to run_meta.json only.
    """
    out = Path(output_dir)
    (out / "figures").mkdir(parents=True, exist_ok=True)
    refusals = refusals or []

    effects: list[dict] = []
    impacts: list[dict] = []
    if analysis:
        effects += analysis.get("effects", [])
        impacts += analysis.get("adverse_impact", [])
    if blinding:
        effects += blinding.get("effects", [])
        impacts += blinding.get("adverse_impact", [])

    report = {
        "run": dict(
            run_meta,
            rows=len(table.rows) if table else 0,
            refusal_count=len(refusals),
            refusals=refusal_summary(refusals),
        ),
        "effects": effects,
        "adverse_impact": impacts,
        "manipulation": manipulation or {},
        "predictability": predictability or [],
    }

    (out / "report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    (out / "report.txt").write_text(render_text_report(report), encoding="utf-8")
    if table is not None:
        table.to_csv(out / "ratings.csv")
    if effects:
        by_model = [e for e in effects if e["condition"] == "default" and not e["blinded"]]
        (out / "figures" / "effects_by_model.csv").write_text(
            effects_csv(by_model), encoding="utf-8"
        )
        (out / "figures" / "effects_by_condition.csv").write_text(
            effects_csv(effects), encoding="utf-8"
        )
    if impacts:
        (out / "figures" / "adverse_impact.csv").write_text(
            adverse_impact_csv(impacts), encoding="utf-8"
        )
    if manipulation and manipulation.get("matrices"):
        (out / "figures" / "agreement.csv").write_text(
            agreement_csv(manipulation["matrices"]), encoding="utf-8"
        )
    if predictability:
        (out / "figures" / "auc.csv").write_text(
            auc_csv(predictability), encoding="utf-8"
        )
    if volatile is not None:
        (out / "run_meta.json").write_text(
            json.dumps(volatile, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    return report
