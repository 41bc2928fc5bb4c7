"""End-to-end audit orchestration.

An ExperimentPlan deterministically expands into a set of planned
elicitations (dossier x cell x model x condition x replicate). Runs are
resumable: every exchange goes through the provider cache, so re-invoking
a run skips completed items and a fully warmed cache reproduces the
ratings table byte for byte with zero network calls.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field

from .dossier import (
    Demographics,
    Dossier,
    Gender,
    Race,
    RedactedDossier,
    RedactionRuleSet,
    blind,
    instantiate,
)
from .elicitation import (
    DistrictFrom,
    PromptCondition,
    build_evaluation_prompt,
    build_manipulation_prompt,
    parse_perception,
    parse_ratings,
)
from .errors import AuditError, ConfigError, ExperimentError, StatsError
from .identity import DemographicCell, NameCatalog, all_cells, default_catalog, sample_identity
from .provider import (
    ChatRequest,
    OpenAICompatibleProvider,
    Provider,
    ProviderConfig,
    ResponseCache,
    SimulatedRaterSpec,
)
from .simulated import SimulatedProvider, format_tag
from .stats import (
    EffectEstimate,
    agreement_matrix,
    adverse_impact_ratio,
    bootstrap_pivotal_ci,
    cluster_robust_se,
    fit_ols,
    kfold_cv_auc,
    selection_rates,
    standardized_effects,
)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


# ---------------------------------------------------------------------------
# Plan
# ---------------------------------------------------------------------------


class ModelSpec(BaseModel):
    id: str  # provider id (also the cache namespace)
    model: str
    provider: ProviderConfig


class CorpusConfig(BaseModel):
    dossier_dir: Optional[str] = None
    redacted_dir: Optional[str] = None
    rules_file: Optional[str] = None
    district_names: list[str] = Field(default_factory=list)
    district_city: Optional[str] = None
    district_state: Optional[str] = None

    def district_from(self) -> Optional[DistrictFrom]:
        if not self.district_names:
            return None
        return DistrictFrom(
            names=self.district_names, city=self.district_city, state=self.district_state
        )


class RunConfig(BaseModel):
    master_seed: int = 0
    replicate_count: int = 1
    parallelism: int = 1
    cache_dir: str = "cache"
    output_dir: str = "out"
    bootstrap_samples: int = 1000
    thresholds: list[int] = Field(default_factory=lambda: [3, 4, 5])


class ExperimentPlan(BaseModel):
    corpus: CorpusConfig
    catalog_path: Optional[str] = None
    job_description: str = ""
    models: list[ModelSpec]
    conditions: list[PromptCondition] = Field(default_factory=list)
    run: RunConfig = Field(default_factory=RunConfig)

    def effective_conditions(self) -> list[PromptCondition]:
        return self.conditions or [PromptCondition()]

    def load_catalog(self) -> NameCatalog:
        if self.catalog_path:
            return NameCatalog.from_file(self.catalog_path)
        return default_catalog()


def plan_from_toml(path: str | Path) -> ExperimentPlan:
    """Load a plan file; relative paths resolve against the file's directory."""
    path = Path(path)
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    base = path.parent

    def resolved(p: str | None) -> str | None:
        return str((base / p).resolve()) if p else None

    corpus_doc = doc.get("corpus", {})
    corpus = CorpusConfig(
        dossier_dir=resolved(corpus_doc.get("dossier_dir")),
        redacted_dir=resolved(corpus_doc.get("redacted_dir")),
        rules_file=resolved(corpus_doc.get("rules_file")),
        district_names=corpus_doc.get("district_names", []),
        district_city=corpus_doc.get("district_city"),
        district_state=corpus_doc.get("district_state"),
    )

    task = doc.get("task", {})
    job = task.get("job_description", "")
    if not job and task.get("job_description_file"):
        job = Path(resolved(task["job_description_file"])).read_text("utf-8")

    models = []
    for m in doc.get("models", []):
        simulated = None
        if "simulated" in m:
            simulated = SimulatedRaterSpec.model_validate(m["simulated"])
            if simulated.catalog_path:
                simulated = simulated.model_copy(
                    update={"catalog_path": resolved(simulated.catalog_path)}
                )
        provider = ProviderConfig(
            kind=m.get("kind", "openai_compatible"),
            base_url=m.get("base_url", ""),
            api_key_env=m.get("api_key_env", ""),
            requests_per_minute=m.get("requests_per_minute", 600),
            max_retries=m.get("max_retries", 4),
            backoff_base_ms=m.get("backoff_base_ms", 250),
            embed_model=m.get("embed_model", "text-embedding-small"),
            simulated=simulated,
        )
        models.append(ModelSpec(id=m["id"], model=m.get("model", m["id"]), provider=provider))
    if not models:
        raise ConfigError("plan defines no [[models]]")

    conditions = [PromptCondition.model_validate(c) for c in doc.get("conditions", [])]

    run_doc = doc.get("run", {})
    run = RunConfig(
        master_seed=run_doc.get("seed", 0),
        replicate_count=run_doc.get("replicates", 1),
        parallelism=run_doc.get("parallelism", 1),
        cache_dir=resolved(run_doc.get("cache_dir", "cache")),
        output_dir=resolved(run_doc.get("out", "out")),
        bootstrap_samples=run_doc.get("bootstrap_samples", 1000),
        thresholds=run_doc.get("thresholds", [3, 4, 5]),
    )

    catalog_doc = doc.get("catalog", {})
    return ExperimentPlan(
        corpus=corpus,
        catalog_path=resolved(catalog_doc.get("path")),
        job_description=job,
        models=models,
        conditions=conditions,
        run=run,
    )


# ---------------------------------------------------------------------------
# Corpus I/O
# ---------------------------------------------------------------------------


def load_corpus(directory: str | Path) -> list[Dossier]:
    files = sorted(Path(directory).glob("*.json"))
    if not files:
        raise ConfigError(f"no dossier files in {directory}")
    out = [Dossier.model_validate_json(f.read_text("utf-8")) for f in files]
    ids = [d.id for d in out]
    if len(set(ids)) != len(ids):
        raise ConfigError("duplicate dossier ids in corpus")
    return out


def load_redacted_corpus(directory: str | Path) -> dict[str, RedactedDossier]:
    files = sorted(Path(directory).glob("*.json"))
    if not files:
        raise ConfigError(f"no redacted dossier files in {directory}")
    out = {}
    for f in files:
        rd = RedactedDossier.model_validate_json(f.read_text("utf-8"))
        out[rd.source_id] = rd
    return out


def load_rules(path: str | Path) -> dict[str, RedactionRuleSet]:
    doc = json.loads(Path(path).read_text("utf-8"))
    return {k: RedactionRuleSet.model_validate(v) for k, v in doc.items()}


def save_json(path: str | Path, document: dict | list) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(document, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Ratings table
# ---------------------------------------------------------------------------

RATINGS_CSV_COLUMNS = (
    "source_id",
    "model_id",
    "condition",
    "race",
    "gender",
    "blinded",
    "experience",
    "professionalism",
    "fit",
    "hire",
)


class RatingRow(BaseModel):
    source_id: str
    model_id: str
    condition: str
    race: str
    gender: str
    blinded: bool = False
    experience: int
    professionalism: int
    fit: int
    hire: int

    def sort_key(self) -> tuple:
        return (
            self.source_id,
            self.model_id,
            self.condition,
            self.race,
            self.gender,
            self.blinded,
            self.experience,
            self.professionalism,
            self.fit,
            self.hire,
        )


class RefusalRecord(BaseModel):
    source_id: str
    cell: str
    model_id: str
    condition: str
    replicate: int
    blinded: bool = False
    error_code: str
    detail: str = ""

    def sort_key(self) -> tuple:
        return (
            self.source_id,
            self.model_id,
            self.condition,
            self.cell,
            self.replicate,
            self.blinded,
        )


class RatingsTable(BaseModel):
    rows: list[RatingRow] = Field(default_factory=list)

    def sorted(self) -> "RatingsTable":
        return RatingsTable(rows=sorted(self.rows, key=RatingRow.sort_key))

    def subset(self, **criteria) -> "RatingsTable":
        rows = [
            r
            for r in self.rows
            if all(getattr(r, k) == v for k, v in criteria.items())
        ]
        return RatingsTable(rows=rows)

    def column(self, name: str) -> np.ndarray:
        return np.asarray([getattr(r, name) for r in self.rows])

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(RATINGS_CSV_COLUMNS)
        for r in self.rows:
            writer.writerow(
                [
                    r.source_id,
                    r.model_id,
                    r.condition,
                    r.race,
                    r.gender,
                    int(r.blinded),
                    r.experience,
                    r.professionalism,
                    r.fit,
                    r.hire,
                ]
            )
        return buf.getvalue()

    def to_csv(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_csv_text(), encoding="utf-8")

    @classmethod
    def from_csv(cls, path: str | Path) -> "RatingsTable":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            rows = [
                RatingRow(
                    source_id=rec["source_id"],
                    model_id=rec["model_id"],
                    condition=rec["condition"],
                    race=rec["race"],
                    gender=rec["gender"],
                    blinded=rec["blinded"] in ("1", "true", "True"),
                    experience=int(rec["experience"]),
                    professionalism=int(rec["professionalism"]),
                    fit=int(rec["fit"]),
                    hire=int(rec["hire"]),
                )
                for rec in reader
            ]
        return cls(rows=rows)


# ---------------------------------------------------------------------------
# Providers and plan expansion
# ---------------------------------------------------------------------------


def build_provider(
    spec: ModelSpec,
    cache: ResponseCache | None,
    catalog: NameCatalog | None = None,
    transport=None,
    sleep=time.sleep,
) -> Provider:
    if spec.provider.kind == "simulated":
        return SimulatedProvider(
            spec.id,
            spec.provider.simulated or SimulatedRaterSpec(),
            catalog=catalog,
            cache=cache,
        )
    return OpenAICompatibleProvider(
        spec.id, spec.provider, cache=cache, transport=transport, sleep=sleep
    )


def build_providers(
    plan: ExperimentPlan, catalog: NameCatalog | None = None, transport=None
) -> dict[str, Provider]:
    cache = ResponseCache(plan.run.cache_dir) if plan.run.cache_dir else None
    return {
        spec.id: build_provider(spec, cache, catalog=catalog, transport=transport)
        for spec in plan.models
    }


class PlannedItem(BaseModel):
    source_id: str
    cell: str
    model_id: str
    model: str
    condition: str
    replicate: int

    def seed(self, master_seed: int) -> int:
        blob = f"{master_seed}\x1f{self.source_id}\x1f{self.cell}\x1f{self.replicate}"
        return int.from_bytes(hashlib.sha256(blob.encode()).digest()[:8], "big")


def expand_plan(plan: ExperimentPlan, source_ids: Sequence[str]) -> list[PlannedItem]:
    """The full deterministic set of planned elicitations."""
    items = []
    for source_id in sorted(source_ids):
        for cell in all_cells():
            for spec in plan.models:
                for condition in plan.effective_conditions():
                    for rep in range(plan.run.replicate_count):
                        items.append(
                            PlannedItem(
                                source_id=source_id,
                                cell=cell.key,
                                model_id=spec.id,
                                model=spec.model,
                                condition=condition.condition_id(),
                                replicate=rep,
                            )
                        )
    return items


# ---------------------------------------------------------------------------
# Audit run
# ---------------------------------------------------------------------------


class RunResult(BaseModel):
    table: RatingsTable
    refusals: list[RefusalRecord]
    planned: int
    provider_stats: dict[str, dict]

    def conservation_ok(self) -> bool:
        return len(self.table.rows) + len(self.refusals) == self.planned


def _elicit_one(
    item: PlannedItem,
    redacted: RedactedDossier,
    condition: PromptCondition,
    plan: ExperimentPlan,
    catalog: NameCatalog,
    provider: Provider,
) -> RatingRow | RefusalRecord:
    cell = DemographicCell.from_key(item.cell)
    rng = np.random.default_rng(item.seed(plan.run.master_seed))
    identity = sample_identity(catalog, cell, rng)
    dossier = instantiate(redacted, identity)
    tag = format_tag(
        source=item.source_id, group=cell.key, rep=item.replicate, blinded=0
    )
    request = build_evaluation_prompt(
        dossier,
        plan.job_description,
        condition,
        model=item.model,
        district_from=plan.corpus.district_from(),
        request_tag=tag,
    )
    try:
        exchange = provider.complete(request)
        result = parse_ratings(exchange.response_text)
    except AuditError as exc:
        return RefusalRecord(
            source_id=item.source_id,
            cell=item.cell,
            model_id=item.model_id,
            condition=item.condition,
            replicate=item.replicate,
            error_code=exc.code,
            detail=str(exc)[:500],
        )
    return RatingRow(
        source_id=item.source_id,
        model_id=item.model_id,
        condition=item.condition,
        race=cell.race.value,
        gender=cell.gender.value,
        blinded=False,
        experience=result.experience,
        professionalism=result.professionalism,
        fit=result.fit,
        hire=result.hire,
    )


def _run_items(worker, items, parallelism: int):
    if parallelism <= 1:
        return [worker(item) for item in items]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(worker, items))


def run_audit(plan: ExperimentPlan, providers: dict[str, Provider] | None = None) -> RunResult:
    """Elicit ratings for every planned synthetic dossier.

    Per-item elicitation failures are recorded as refusals, never fatal;
    only configuration errors abort. Resumable through the provider cache.
    """
    if not plan.corpus.redacted_dir:
        raise ConfigError("plan.corpus.redacted_dir is required for an audit run")
    if not plan.job_description.strip():
        raise ConfigError("plan.job_description is required")
    catalog = plan.load_catalog()
    redacted = load_redacted_corpus(plan.corpus.redacted_dir)
    providers = providers or build_providers(plan, catalog=catalog)
    conditions = {c.condition_id(): c for c in plan.effective_conditions()}
    items = expand_plan(plan, list(redacted))

    def worker(item: PlannedItem):
        return _elicit_one(
            item,
            redacted[item.source_id],
            conditions[item.condition],
            plan,
            catalog,
            providers[item.model_id],
        )

    outcomes = _run_items(worker, items, plan.run.parallelism)
    rows = [o for o in outcomes if isinstance(o, RatingRow)]
    refusals = [o for o in outcomes if isinstance(o, RefusalRecord)]
    return RunResult(
        table=RatingsTable(rows=rows).sorted(),
        refusals=sorted(refusals, key=RefusalRecord.sort_key),
        planned=len(items),
        provider_stats={k: p.stats.as_dict() for k, p in providers.items()},
    )


# ---------------------------------------------------------------------------
# Manipulation check
# ---------------------------------------------------------------------------


class ManipulationResult(BaseModel):
    matrices: dict[str, dict]  # model_id -> {"race": matrix, "gender": matrix}
    absent_counts: dict[str, int]
    planned: int


def run_manipulation_check(
    plan: ExperimentPlan, providers: dict[str, Provider] | None = None
) -> ManipulationResult:
    """Elicit perceived race/gender for every synthetic dossier and compare
    against the intended cell."""
    if not plan.corpus.redacted_dir:
        raise ConfigError("plan.corpus.redacted_dir is required")
    catalog = plan.load_catalog()
    redacted = load_redacted_corpus(plan.corpus.redacted_dir)
    providers = providers or build_providers(plan, catalog=catalog)
    # The manipulation check runs one elicitation per (dossier, cell, model).
    base_plan = plan.model_copy(deep=True)
    base_plan.conditions = [PromptCondition()]
    base_plan.run.replicate_count = 1
    items = expand_plan(base_plan, list(redacted))

    def worker(item: PlannedItem):
        cell = DemographicCell.from_key(item.cell)
        rng = np.random.default_rng(item.seed(plan.run.master_seed))
        identity = sample_identity(catalog, cell, rng)
        dossier = instantiate(redacted[item.source_id], identity)
        request = build_manipulation_prompt(
            dossier,
            model=item.model,
            request_tag=format_tag(source=item.source_id, group=cell.key, kind="perception"),
        )
        try:
            exchange = providers[item.model_id].complete(request)
        except AuditError as exc:
            return (item, None, exc.code)
        return (item, parse_perception(exchange.response_text), "")

    outcomes = _run_items(worker, items, plan.run.parallelism)
    matrices: dict[str, dict] = {}
    absent_counts: dict[str, int] = {}
    races = [r.value for r in sorted(Race, key=lambda x: x.value)]
    genders = [g.value for g in sorted(Gender, key=lambda x: x.value)]
    for spec in plan.models:
        pairs = [
            (item, res)
            for item, res, _err in outcomes
            if item.model_id == spec.id and res is not None
        ]
        if not pairs:
            continue
        race_pairs = [
            (DemographicCell.from_key(i.cell).race.value, res.perceived_race)
            for i, res in pairs
        ]
        gender_pairs = [
            (DemographicCell.from_key(i.cell).gender.value, res.perceived_gender)
            for i, res in pairs
        ]
        matrices[spec.id] = {
            "race": agreement_matrix(race_pairs, races, attribute="race").to_dict(),
            "gender": agreement_matrix(gender_pairs, genders, attribute="gender").to_dict(),
        }
        absent_counts[spec.id] = sum(
            1
            for _, res in pairs
            if res.perceived_race == "ABSENT" and res.perceived_gender == "ABSENT"
        )
    return ManipulationResult(
        matrices=matrices, absent_counts=absent_counts, planned=len(items)
    )


# ---------------------------------------------------------------------------
# Analysis of ratings tables
# ---------------------------------------------------------------------------

EFFECT_TERMS = ("female", "Asian", "Black", "Hispanic")


def effects_design(table: RatingsTable) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Design matrix: intercept + female + race indicators (ref male, White)."""
    rows = table.rows
    X = np.column_stack(
        [
            np.ones(len(rows)),
            [1.0 if r.gender == Gender.FEMALE.value else 0.0 for r in rows],
            [1.0 if r.race == Race.ASIAN.value else 0.0 for r in rows],
            [1.0 if r.race == Race.BLACK.value else 0.0 for r in rows],
            [1.0 if r.race == Race.HISPANIC.value else 0.0 for r in rows],
        ]
    )
    y = np.asarray([r.hire for r in rows], dtype=float)
    return X, y, ["", *EFFECT_TERMS]


def estimate_effects(table: RatingsTable) -> list[EffectEstimate]:
    """Standardized race/gender effects with dossier-clustered SEs."""
    X, y, terms = effects_design(table)
    clusters = [r.source_id for r in table.rows]
    fit = fit_ols(y, X)
    se = cluster_robust_se(fit, clusters)
    return standardized_effects(fit, se, terms, clusters)


def adverse_impact_analysis(
    table: RatingsTable,
    thresholds: Sequence[int],
    n_boot: int = 1000,
    seed: int = 0,
) -> list[dict]:
    """Selection rates and most-favored-reference impact ratios per
    threshold and attribute, with pivotal bootstrap CIs clustered on the
    source dossier."""
    out = []
    clusters = np.asarray([r.source_id for r in table.rows], dtype=object)
    hire = table.column("hire").astype(float)
    for attribute in ("race", "gender"):
        groups = np.asarray([getattr(r, attribute) for r in table.rows], dtype=object)
        for threshold in thresholds:
            rates = selection_rates(hire, groups, threshold)
            try:
                ratios = adverse_impact_ratio(rates)
            except StatsError as exc:
                out.append(
                    {
                        "attribute": attribute,
                        "threshold": threshold,
                        "rates": rates,
                        "error": exc.code,
                    }
                )
                continue
            reference = next(iter(ratios.values())).reference
            entries = {}
            for group, ratio in ratios.items():

                def statistic(idx: np.ndarray, g=group) -> float:
                    sub_rates = selection_rates(hire[idx], groups[idx], threshold)
                    if reference not in sub_rates or sub_rates[reference] == 0:
                        raise StatsError("reference empty", code="ZERO_REFERENCE_RATE")
                    if g not in sub_rates:
                        raise StatsError("group empty", code="EMPTY_GROUP")
                    return sub_rates[g] / sub_rates[reference]

                try:
                    low, high = bootstrap_pivotal_ci(
                        clusters, statistic, n_boot=n_boot, seed=seed
                    )
                except StatsError:
                    low = high = None
                entries[group] = {
                    "rate": ratio.rate,
                    "ratio": ratio.ratio,
                    "flagged": ratio.flagged,
                    "ci95_low": low,
                    "ci95_high": high,
                }
            out.append(
                {
                    "attribute": attribute,
                    "threshold": threshold,
                    "reference": reference,
                    "groups": entries,
                }
            )
    return out


def analyze_ratings(
    table: RatingsTable,
    thresholds: Sequence[int] = (3, 4, 5),
    n_boot: int = 1000,
    seed: int = 0,
) -> dict:
    """Per (model, condition, blinded) effects and adverse-impact sections."""
    combos = sorted(
        {(r.model_id, r.condition, r.blinded) for r in table.rows},
        key=lambda t: (t[0], t[1], t[2]),
    )
    effects = []
    impacts = []
    for model_id, condition, blinded in combos:
        sub = table.subset(model_id=model_id, condition=condition, blinded=blinded)
        entry = {
            "model_id": model_id,
            "condition": condition,
            "blinded": blinded,
            "n_rows": len(sub.rows),
        }
        try:
            entry["effects"] = [e.to_dict() for e in estimate_effects(sub)]
        except StatsError as exc:
            entry["error"] = exc.code
        effects.append(entry)
        impacts.append(
            {
                "model_id": model_id,
                "condition": condition,
                "blinded": blinded,
                "analysis": adverse_impact_analysis(
                    sub, thresholds, n_boot=n_boot, seed=seed
                ),
            }
        )
    return {"effects": effects, "adverse_impact": impacts}


# ---------------------------------------------------------------------------
# Blinding comparison
# ---------------------------------------------------------------------------


class BlindingResult(BaseModel):
    table: RatingsTable
    refusals: list[RefusalRecord]
    planned: int
    analysis: dict


def run_blinding_comparison(
    plan: ExperimentPlan, providers: dict[str, Provider] | None = None
) -> BlindingResult:
    """Evaluate real dossiers unmodified and blinded, then compare
    adverse-impact and effect estimates across the two arms.

    Uses the observed demographics of the real applicants; clustering is
    by dossier (one row per dossier per arm per model).
    """
    if not plan.corpus.dossier_dir:
        raise ConfigError("plan.corpus.dossier_dir is required for blinding comparison")
    if not plan.corpus.redacted_dir:
        raise ConfigError("plan.corpus.redacted_dir is required for blinding comparison")
    catalog = plan.load_catalog()
    corpus = load_corpus(plan.corpus.dossier_dir)
    redacted = load_redacted_corpus(plan.corpus.redacted_dir)
    missing_obs = [d.id for d in corpus if d.observed is None]
    if missing_obs:
        raise ExperimentError(
            f"dossiers without observed demographics: {missing_obs[:5]}",
            code="MISSING_OBSERVED_DEMOGRAPHICS",
        )
    missing_red = [d.id for d in corpus if d.id not in redacted]
    if missing_red:
        raise ConfigError(f"dossiers without redacted counterparts: {missing_red[:5]}")
    providers = providers or build_providers(plan, catalog=catalog)

    jobs = []
    for dossier in sorted(corpus, key=lambda d: d.id):
        blinded_dossier = blind(redacted[dossier.id])
        blinded_dossier = blinded_dossier.model_copy(update={"observed": dossier.observed})
        for spec in plan.models:
            jobs.append((dossier, spec, False))
            jobs.append((blinded_dossier, spec, True))

    def worker(job):
        dossier, spec, is_blinded = job
        cell_key = f"{dossier.observed.race.value}/{dossier.observed.gender.value}"
        source_id = dossier.metadata.get("source_id", dossier.id)
        request = build_evaluation_prompt(
            dossier,
            plan.job_description,
            PromptCondition(),
            model=spec.model,
            district_from=plan.corpus.district_from(),
            request_tag=format_tag(
                source=source_id, group=cell_key, blinded=int(is_blinded)
            ),
        )
        try:
            exchange = providers[spec.id].complete(request)
            result = parse_ratings(exchange.response_text)
        except AuditError as exc:
            return RefusalRecord(
                source_id=source_id,
                cell=cell_key,
                model_id=spec.id,
                condition="default",
                replicate=0,
                blinded=is_blinded,
                error_code=exc.code,
                detail=str(exc)[:500],
            )
        return RatingRow(
            source_id=source_id,
            model_id=spec.id,
            condition="default",
            race=dossier.observed.race.value,
            gender=dossier.observed.gender.value,
            blinded=is_blinded,
            experience=result.experience,
            professionalism=result.professionalism,
            fit=result.fit,
            hire=result.hire,
        )

    outcomes = _run_items(worker, jobs, plan.run.parallelism)
    rows = [o for o in outcomes if isinstance(o, RatingRow)]
    refusals = [o for o in outcomes if isinstance(o, RefusalRecord)]
    table = RatingsTable(rows=rows).sorted()
    analysis = analyze_ratings(
        table,
        thresholds=plan.run.thresholds,
        n_boot=plan.run.bootstrap_samples,
        seed=plan.run.master_seed,
    )
    return BlindingResult(
        table=table,
        refusals=sorted(refusals, key=RefusalRecord.sort_key),
        planned=len(jobs),
        analysis=analysis,
    )


# ---------------------------------------------------------------------------
# Predictability of race/gender from materials
# ---------------------------------------------------------------------------

PREDICTABILITY_PENALTY_GRID = (0.01, 0.1, 1.0, 10.0)


def _material_texts(d: Dossier | RedactedDossier) -> dict[str, str]:
    return {
        "resume": d.resume,
        "transcripts": "\n".join(t.answer for t in d.transcripts),
    }


def run_predictability(
    corpus: list[Dossier],
    redacted: dict[str, RedactedDossier],
    embedder,
    k: int = 10,
    penalty_grid: Sequence[float] = PREDICTABILITY_PENALTY_GRID,
    seed: int = 0,
    split_half: bool = False,
) -> list[dict]:
    """AUC of predicting race/gender from resume/transcript embeddings,
    for redacted and unredacted materials.

    For each (materials, redaction, attribute): the penalty is chosen from
    ``penalty_grid`` by cross-validated AUC, and that AUC is reported.
    ``split_half`` restricts model fitting to a random half of the corpus
    and cross-validates within the held-out half.
    """
    missing = [d.id for d in corpus if d.observed is None]
    if missing:
        raise ExperimentError(
            f"dossiers without observed demographics: {missing[:5]}",
            code="MISSING_OBSERVED_DEMOGRAPHICS",
        )
    ordered = sorted(corpus, key=lambda d: d.id)
    sources: dict[str, dict[str, dict[str, str]]] = {"unredacted": {}, "redacted": {}}
    for d in ordered:
        sources["unredacted"][d.id] = _material_texts(d)
        if d.id not in redacted:
            raise ConfigError(f"no redacted counterpart for dossier {d.id}")
        sources["redacted"][d.id] = _material_texts(redacted[d.id])

    embeddings: dict[tuple[str, str, str], np.ndarray] = {}
    for redaction, by_id in sources.items():
        for part in ("resume", "transcripts"):
            texts = [by_id[d.id][part] for d in ordered]
            vecs = embedder.embed(texts)
            for d, v in zip(ordered, vecs):
                embeddings[(redaction, part, d.id)] = np.asarray(v, dtype=float)

    def features(redaction: str, materials: str) -> np.ndarray:
        if materials == "both":
            return np.stack(
                [
                    np.concatenate(
                        [
                            embeddings[(redaction, "resume", d.id)],
                            embeddings[(redaction, "transcripts", d.id)],
                        ]
                    )
                    for d in ordered
                ]
            )
        return np.stack([embeddings[(redaction, materials, d.id)] for d in ordered])

    attributes: dict[str, np.ndarray] = {
        "gender:female": np.array(
            [1 if d.observed.gender == Gender.FEMALE else 0 for d in ordered]
        )
    }
    for race in sorted(Race, key=lambda r: r.value):
        attributes[f"race:{race.value}"] = np.array(
            [1 if d.observed.race == race else 0 for d in ordered]
        )

    half_mask = None
    if split_half:
        rng = np.random.default_rng(seed)
        idx = rng.permutation(len(ordered))
        half_mask = np.zeros(len(ordered), dtype=bool)
        half_mask[idx[: len(ordered) // 2]] = True

    results = []
    for redaction in ("unredacted", "redacted"):
        for materials in ("resume", "transcripts", "both"):
            X_full = features(redaction, materials)
            for attribute, y_full in attributes.items():
                X, y = X_full, y_full
                if half_mask is not None:
                    X, y = X_full[~half_mask], y_full[~half_mask]
                entry = {
                    "redaction": redaction,
                    "materials": materials,
                    "attribute": attribute,
                    "n": int(y.size),
                }
                try:
                    best = None
                    for penalty in penalty_grid:
                        cv = kfold_cv_auc(X, y, k=min(k, int(y.size)), penalty=penalty, seed=seed)
                        if best is None or cv.mean_auc > best[1].mean_auc:
                            best = (penalty, cv)
                    entry["penalty"] = best[0]
                    entry["auc"] = best[1].mean_auc
                    entry["pooled_auc"] = best[1].pooled_auc
                except StatsError as exc:
                    entry["error"] = exc.code
                results.append(entry)
    return results
