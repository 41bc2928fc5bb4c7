"""FastAPI service wrapping the audit toolkit.

Stateless wrappers over the core operations plus the long-running audit
endpoints. Paths in requests are interpreted on the server's filesystem;
the bundled CLI mounts this app in-process so local runs need no server.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..dossier import blind as blind_op
from ..dossier import instantiate, redact
from ..elicitation import (
    build_evaluation_prompt,
    build_manipulation_prompt,
    parse_perception,
    parse_ratings,
    PromptCondition,
)
from ..errors import AuditError, ConfigError
from ..experiment import (
    RatingsTable,
    analyze_ratings,
    build_provider,
    build_providers,
    expand_plan,
    load_corpus,
    load_redacted_corpus,
    ModelSpec,
    run_audit,
    run_blinding_comparison,
    run_manipulation_check,
    run_predictability,
    save_json,
)
from ..identity import (
    DemographicCell,
    build_catalog,
    default_catalog,
    embed_candidates,
    factorial_expand,
    sample_identity,
)
from ..provider import ResponseCache
from ..report import assemble_report
from . import schemas as S

app = FastAPI(title="screenaudit", version=__version__)


@app.exception_handler(AuditError)
async def audit_error_handler(_request: Request, exc: AuditError) -> JSONResponse:
    status = 400 if isinstance(exc, ConfigError) else 422
    body = S.ErrorBody(
        code=exc.code,
        message=str(exc),
        details={k: v for k, v in exc.details.items() if _jsonable(v)},
    )
    return JSONResponse(status_code=status, content=body.model_dump(mode="json"))


def _jsonable(value) -> bool:
    try:
        json.dumps(value)
        return True
    except TypeError:
        return False


@app.get("/health", response_model=S.HealthResponse)
def health() -> S.HealthResponse:
    return S.HealthResponse(status="ok", version=__version__)


# -- dossier operations -----------------------------------------------------


@app.post("/dossiers/redact")
def redact_endpoint(req: S.RedactRequest):
    return redact(req.dossier, req.rules)


@app.post("/dossiers/instantiate")
def instantiate_endpoint(req: S.InstantiateRequest):
    return instantiate(req.redacted, req.identity)


@app.post("/dossiers/blind")
def blind_endpoint(req: S.BlindRequest):
    return blind_op(req.redacted)


@app.post("/dossiers/expand", response_model=S.ExpandResponse)
def expand_endpoint(req: S.ExpandRequest) -> S.ExpandResponse:
    catalog = req.catalog or default_catalog()
    rng = np.random.default_rng(req.seed)
    cells = [
        S.ExpandedCell(cell=cell.key, identity=identity, dossier=dossier)
        for cell, identity, dossier in factorial_expand(req.redacted, catalog, rng)
    ]
    return S.ExpandResponse(cells=cells)


@app.post("/identity/sample")
def sample_identity_endpoint(req: S.SampleIdentityRequest):
    catalog = req.catalog or default_catalog()
    rng = np.random.default_rng(req.seed)
    return sample_identity(catalog, DemographicCell.from_key(req.cell), rng)


@app.post("/catalog/build")
def catalog_build_endpoint(req: S.CatalogBuildRequest):
    cache = ResponseCache(req.cache_dir) if req.cache_dir else None
    embedder = build_provider(
        ModelSpec(id=req.embedder_id, model=req.embedder.embed_model, provider=req.embedder),
        cache,
    )
    candidates = embed_candidates(req.rows, embedder)
    catalog = build_catalog(candidates, penalty=req.penalty, colleges=req.colleges)
    if req.output_path:
        Path(req.output_path).parent.mkdir(parents=True, exist_ok=True)
        Path(req.output_path).write_text(catalog.to_json(), encoding="utf-8")
    return catalog


# -- prompts and parsing ----------------------------------------------------


@app.post("/prompts/evaluation", response_model=S.PromptResponse)
def evaluation_prompt_endpoint(req: S.EvaluationPromptRequest) -> S.PromptResponse:
    condition = req.condition or PromptCondition()
    request = build_evaluation_prompt(
        req.dossier,
        req.job_description,
        condition,
        model=req.model,
        district_from=req.district_from,
    )
    return S.PromptResponse(request=request, condition_id=condition.condition_id())


@app.post("/prompts/manipulation", response_model=S.PromptResponse)
def manipulation_prompt_endpoint(req: S.ManipulationPromptRequest) -> S.PromptResponse:
    request = build_manipulation_prompt(req.dossier, model=req.model)
    return S.PromptResponse(request=request, condition_id="default")


@app.post("/parse/ratings")
def parse_ratings_endpoint(req: S.ParseTextRequest):
    return parse_ratings(req.text)


@app.post("/parse/perception")
def parse_perception_endpoint(req: S.ParseTextRequest):
    return parse_perception(req.text)


# -- audit workflows ---------------------------------------------------------


@app.post("/plans/expand", response_model=S.PlanExpansionResponse)
def plan_expand_endpoint(req: S.PlanRequest) -> S.PlanExpansionResponse:
    plan = req.plan
    if not plan.corpus.redacted_dir:
        raise ConfigError("plan.corpus.redacted_dir is required")
    redacted = load_redacted_corpus(plan.corpus.redacted_dir)
    items = expand_plan(plan, list(redacted))
    return S.PlanExpansionResponse(count=len(items), items=items)


@app.post("/audit/run", response_model=S.AuditRunResponse)
def audit_run_endpoint(req: S.PlanRequest) -> S.AuditRunResponse:
    plan = req.plan
    result = run_audit(plan)
    out = Path(plan.run.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    result.table.to_csv(out / "ratings.csv")
    save_json(
        out / "refusals.json", [r.model_dump(mode="json") for r in result.refusals]
    )
    save_json(out / "run_meta.json", {"provider_stats": result.provider_stats})
    return S.AuditRunResponse(
        planned=result.planned,
        rows=len(result.table.rows),
        refusal_count=len(result.refusals),
        refusals=result.refusals,
        conservation_ok=result.conservation_ok(),
        output_dir=str(out),
        ratings_csv=str(out / "ratings.csv"),
        provider_stats=result.provider_stats,
    )


@app.post("/audit/manipulation", response_model=S.ManipulationRunResponse)
def manipulation_run_endpoint(req: S.PlanRequest) -> S.ManipulationRunResponse:
    plan = req.plan
    result = run_manipulation_check(plan)
    out = Path(plan.run.output_dir)
    path = out / "manipulation.json"
    save_json(path, result.model_dump(mode="json"))
    return S.ManipulationRunResponse(
        planned=result.planned,
        matrices=result.matrices,
        absent_counts=result.absent_counts,
        output_path=str(path),
    )


@app.post("/audit/blinding", response_model=S.BlindingRunResponse)
def blinding_run_endpoint(req: S.PlanRequest) -> S.BlindingRunResponse:
    plan = req.plan
    result = run_blinding_comparison(plan)
    out = Path(plan.run.output_dir)
    result.table.to_csv(out / "blinding_ratings.csv")
    path = out / "blinding.json"
    save_json(path, result.analysis)
    return S.BlindingRunResponse(
        planned=result.planned,
        rows=len(result.table.rows),
        refusal_count=len(result.refusals),
        output_path=str(path),
        ratings_csv=str(out / "blinding_ratings.csv"),
        analysis=result.analysis,
    )


@app.post("/audit/predictability", response_model=S.PredictabilityResponse)
def predictability_endpoint(req: S.PredictabilityRequest) -> S.PredictabilityResponse:
    plan = req.plan
    if not plan.corpus.dossier_dir or not plan.corpus.redacted_dir:
        raise ConfigError("predictability needs corpus.dossier_dir and corpus.redacted_dir")
    corpus = load_corpus(plan.corpus.dossier_dir)
    redacted = load_redacted_corpus(plan.corpus.redacted_dir)
    catalog = plan.load_catalog()
    providers = build_providers(plan, catalog=catalog)
    embedder_id = req.embedder_id or plan.models[0].id
    if embedder_id not in providers:
        raise ConfigError(f"no provider with id {embedder_id!r} in plan")
    results = run_predictability(
        corpus,
        redacted,
        providers[embedder_id],
        k=req.k,
        penalty_grid=req.penalty_grid,
        seed=plan.run.master_seed,
        split_half=req.split_half,
    )
    out = Path(plan.run.output_dir)
    path = out / "predictability.json"
    save_json(path, results)
    return S.PredictabilityResponse(results=results, output_path=str(path))


@app.post("/analyze", response_model=S.AnalyzeResponse)
def analyze_endpoint(req: S.AnalyzeRequest) -> S.AnalyzeResponse:
    table = RatingsTable.from_csv(req.ratings_csv)
    analysis = analyze_ratings(
        table, thresholds=req.thresholds, n_boot=req.n_boot, seed=req.seed
    )
    path = Path(req.output_dir) / "analysis.json"
    save_json(path, analysis)
    return S.AnalyzeResponse(analysis=analysis, output_path=str(path))


@app.post("/simulate", response_model=S.SimulateResponse)
def simulate_endpoint(req: S.SimulateRequest) -> S.SimulateResponse:
    from ..synthcorpus import run_injection_recovery

    report = run_injection_recovery(
        req.workdir,
        req.offsets,
        n_dossiers=req.n_dossiers,
        noise_sd=req.noise_sd,
        seed=req.seed,
        signal_channel=req.signal_channel,
        parallelism=req.parallelism,
        n_boot=req.n_boot,
    )
    path = Path(req.workdir) / "recovery_report.json"
    save_json(path, report)
    return S.SimulateResponse(report=report, output_path=str(path))


@app.post("/report/assemble", response_model=S.ReportResponse)
def report_endpoint(req: S.ReportRequest) -> S.ReportResponse:
    """Assemble report artifacts from whatever analyses exist in output_dir."""
    out = Path(req.output_dir)
    if not out.exists():
        raise ConfigError(f"output directory {out} does not exist")

    def read_json(name: str):
        path = out / name
        if path.exists():
            return json.loads(path.read_text("utf-8"))
        return None

    table = None
    if (out / "ratings.csv").exists():
        table = RatingsTable.from_csv(out / "ratings.csv")
    refusals_doc = read_json("refusals.json") or []
    from ..experiment import RefusalRecord

    refusals = [RefusalRecord.model_validate(r) for r in refusals_doc]
    analysis = read_json("analysis.json")
    blinding = read_json("blinding.json")
    manipulation = read_json("manipulation.json")
    predictability = read_json("predictability.json")
    planned = (len(table.rows) if table else 0) + len(refusals)
    report = assemble_report(
        out,
        run_meta={"master_seed": req.master_seed, "planned": planned},
        table=table,
        refusals=refusals,
        analysis=analysis,
        blinding=blinding,
        manipulation=manipulation,
        predictability=predictability,
    )
    return S.ReportResponse(
        report=report,
        report_json=str(out / "report.json"),
        report_txt=str(out / "report.txt"),
    )
