"""Synthetic fixture corpora and simulation-based self-validation.

The paper-scale audit needs a private applicant corpus; this module
generates realistic-enough stand-ins (teaching resumes and interview
answers with known demographics and catalog names embedded) so the whole
pipeline can be validated end to end: inject a known bias into the
simulated rater, run the audit, and check that the estimators recover it.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .dossier import Demographics, Dossier, RedactionRuleSet, TranscriptTurn, redact
from .identity import NameCatalog, all_cells, sample_identity
from .provider import ProviderConfig, SimulatedRaterSpec
from .simulated import BASE_LOW, BASE_SPAN, _clamp_round, hash_uniform
from .experiment import (
    ExperimentPlan,
    CorpusConfig,
    ModelSpec,
    RatingRow,
    RatingsTable,
    RunConfig,
    analyze_ratings,
    run_audit,
)

from scipy.special import ndtri

DEFAULT_JOB_DESCRIPTION = (
    "Certified classroom teacher for a K-12 public school. Responsibilities "
    "include lesson planning aligned to state standards, differentiated "
    "instruction, family communication, and collaboration with grade-level "
    "teams. A valid teaching certificate and a bachelor's degree are required."
)

_SUBJECTS = ("mathematics", "science", "reading", "social studies", "art", "music")
_YEARS = (3, 4, 5, 6, 7, 8, 9, 11)
_STRENGTH = (
    "classroom management",
    "data-driven instruction",
    "project-based learning",
    "bilingual instruction",
    "special education inclusion",
    "technology integration",
)
_OPENERS = (
    "Dedicated educator focused on student growth.",
    "Versatile teacher with a record of measurable gains.",
    "Energetic instructor committed to equitable classrooms.",
    "Reflective practitioner who builds strong family partnerships.",
)
_ANSWER1 = (
    "Every student can succeed with the right scaffolding.",
    "I begin each year by building classroom norms with my students.",
    "Small-group rotations let me meet students where they are.",
    "Frequent low-stakes assessment keeps my instruction honest.",
)
_ANSWER2 = (
    "When conflict arises I de-escalate first and document afterwards.",
    "I call families early and often, not just when problems appear.",
    "Co-teaching taught me to plan with, not around, my colleagues.",
    "I use exit tickets to decide what to reteach the next morning.",
)


def generate_corpus(
    n: int,
    catalog: NameCatalog,
    seed: int = 0,
    district: str | None = None,
) -> list[tuple[Dossier, RedactionRuleSet]]:
    """``n`` fixture applicants with balanced demographics, catalog names
    embedded in their materials, and matching redaction rules."""
    cells = all_cells()
    out = []
    for i in range(n):
        cell = cells[i % len(cells)]
        rng = np.random.default_rng(
            np.random.SeedSequence([seed, i]).generate_state(1)[0]
        )
        ident = sample_identity(catalog, cell, rng)
        years = _YEARS[int(rng.integers(0, len(_YEARS)))]
        subject = _SUBJECTS[int(rng.integers(0, len(_SUBJECTS)))]
        strength = _STRENGTH[int(rng.integers(0, len(_STRENGTH)))]
        opener = _OPENERS[int(rng.integers(0, len(_OPENERS)))]
        a1 = _ANSWER1[int(rng.integers(0, len(_ANSWER1)))]
        a2 = _ANSWER2[int(rng.integers(0, len(_ANSWER2)))]
        subj, obj, poss = ident.pronouns

        district_line = f" I taught in {district} for two years." if district else ""
        resume = (
            f"{ident.first_name} {ident.last_name}\n"
            f"{opener} Certified K-12 educator with {years} years of classroom "
            f"experience, specializing in {subject}. Colleagues note "
            f"{ident.title} {ident.last_name} for {strength}; {subj} also "
            f"mentors new teachers, and {poss} students show strong growth.\n"
            f"Education: {ident.college.name}, {ident.college.city}, "
            f"{ident.college.state}."
        )
        transcripts = [
            TranscriptTurn(
                question_id="q1",
                answer=(
                    f"{a1} In my {subject} classroom I set clear goals each "
                    f"quarter and track progress openly.{district_line}"
                ),
            ),
            TranscriptTurn(
                question_id="q2",
                answer=(
                    f"{a2} A mentor once told me {subj} believed feedback is a "
                    f"gift, and I carry that with me."
                ),
            ),
        ]
        dossier = Dossier(
            id=f"app{i:05d}",
            resume=resume,
            transcripts=transcripts,
            observed=Demographics(race=cell.race, gender=cell.gender),
            metadata={"fixture": "synthetic-corpus"},
        )
        rules = RedactionRuleSet(
            names=[
                f"{ident.first_name} {ident.last_name}",
                ident.first_name,
                ident.last_name,
            ],
            college_names=[ident.college.name],
            college_locations=[f"{ident.college.city}, {ident.college.state}"],
        )
        out.append((dossier, rules))
    return out


def write_corpus(
    corpus: list[tuple[Dossier, RedactionRuleSet]],
    dossier_dir: str | Path,
    redacted_dir: str | Path,
    rules_file: str | Path | None = None,
) -> None:
    """Write dossiers, their redactions, and the rule map to disk."""
    dossier_dir = Path(dossier_dir)
    redacted_dir = Path(redacted_dir)
    dossier_dir.mkdir(parents=True, exist_ok=True)
    redacted_dir.mkdir(parents=True, exist_ok=True)
    rules_doc = {}
    for dossier, rules in corpus:
        (dossier_dir / f"{dossier.id}.json").write_text(
            dossier.model_dump_json(indent=2) + "\n", encoding="utf-8"
        )
        red = redact(dossier, rules)
        (redacted_dir / f"{dossier.id}.json").write_text(
            red.model_dump_json(indent=2) + "\n", encoding="utf-8"
        )
        rules_doc[dossier.id] = rules.model_dump(mode="json")
    if rules_file is not None:
        Path(rules_file).write_text(
            json.dumps(rules_doc, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )


def simulation_plan(
    workdir: str | Path,
    offsets: dict[str, float],
    noise_sd: float = 0.25,
    seed: int = 0,
    signal_channel: str = "full_content",
    refusal_rate: float = 0.0,
    parallelism: int = 1,
) -> ExperimentPlan:
    """A ready-to-run plan pointing the simulated rater at a generated corpus
    under ``workdir`` (corpus/, redacted/, cache/, out/)."""
    workdir = Path(workdir)
    spec = SimulatedRaterSpec(
        seed=seed,
        group_offsets=offsets,
        noise_sd=noise_sd,
        signal_channel=signal_channel,  # type: ignore[arg-type]
        refusal_rate=refusal_rate,
    )
    return ExperimentPlan(
        corpus=CorpusConfig(
            dossier_dir=str(workdir / "corpus"),
            redacted_dir=str(workdir / "redacted"),
        ),
        job_description=DEFAULT_JOB_DESCRIPTION,
        models=[
            ModelSpec(
                id="sim",
                model="sim-rater",
                provider=ProviderConfig(kind="simulated", simulated=spec),
            )
        ],
        run=RunConfig(
            master_seed=seed,
            parallelism=parallelism,
            cache_dir=str(workdir / "cache"),
            output_dir=str(workdir / "out"),
        ),
    )


def run_injection_recovery(
    workdir: str | Path,
    offsets: dict[str, float],
    n_dossiers: int = 200,
    noise_sd: float = 0.25,
    seed: int = 0,
    signal_channel: str = "full_content",
    parallelism: int = 1,
    n_boot: int = 0,
) -> dict:
    """Generate a corpus, run the simulated audit, and report injected vs
    recovered standardized effects."""
    from .identity import default_catalog

    workdir = Path(workdir)
    catalog = default_catalog()
    corpus = generate_corpus(n_dossiers, catalog, seed=seed)
    write_corpus(corpus, workdir / "corpus", workdir / "redacted")
    plan = simulation_plan(
        workdir,
        offsets,
        noise_sd=noise_sd,
        seed=seed,
        signal_channel=signal_channel,
        parallelism=parallelism,
    )
    result = run_audit(plan)
    hire = result.table.column("hire").astype(float)
    sigma = float(np.std(hire, ddof=1))
    if n_boot:
        analysis = analyze_ratings(
            result.table, thresholds=plan.run.thresholds, n_boot=n_boot, seed=seed
        )
    else:  # skip the bootstrap when only effect recovery is wanted
        from .experiment import estimate_effects

        analysis = {
            "effects": [
                {
                    "model_id": "sim",
                    "condition": "default",
                    "blinded": False,
                    "n_rows": len(result.table.rows),
                    "effects": [e.to_dict() for e in estimate_effects(result.table)],
                }
            ],
            "adverse_impact": [],
        }
    recovery = []
    for entry in analysis["effects"]:
        for eff in entry.get("effects", []):
            injected = float(offsets.get(eff["term"], 0.0))
            target = injected / sigma if sigma else 0.0
            recovery.append(
                {
                    "term": eff["term"],
                    "injected_raw": injected,
                    "injected_standardized": target,
                    "recovered_standardized": eff["coef_standardized"],
                    "gap": eff["coef_standardized"] - target,
                }
            )
    return {
        "plan_seed": seed,
        "n_dossiers": n_dossiers,
        "offsets": offsets,
        "noise_sd": noise_sd,
        "sigma_hat": sigma,
        "rows": len(result.table.rows),
        "refusals": len(result.refusals),
        "analysis": analysis,
        "recovery": recovery,
    }


def simulate_score_rows(
    n_dossiers: int,
    offsets: dict[str, float],
    noise_sd: float,
    seed: int,
) -> RatingsTable:
    """Score-level simulation sharing the rater's score construction but
    skipping prompt assembly; used for estimator calibration studies."""
    rows = []
    for i in range(n_dossiers):
        source = f"s{i:05d}"
        base = BASE_LOW + BASE_SPAN * hash_uniform(seed, "base", i)
        for cell in all_cells():
            offset = sum(
                v
                for k, v in offsets.items()
                if k in (cell.key, cell.race.value, cell.gender.value)
            )
            noise = 0.0
            if noise_sd > 0:
                noise = noise_sd * float(ndtri(hash_uniform(seed, "noise", i, cell.key)))
            score = _clamp_round(base + offset + noise)
            rows.append(
                RatingRow(
                    source_id=source,
                    model_id="sim",
                    condition="default",
                    race=cell.race.value,
                    gender=cell.gender.value,
                    blinded=False,
                    experience=score,
                    professionalism=score,
                    fit=score,
                    hire=score,
                )
            )
    return RatingsTable(rows=rows)
