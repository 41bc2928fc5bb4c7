"""Command-line client for the audit service.

Every subcommand marshals its inputs into a service request and calls the
corresponding route. By default the FastAPI app is mounted in-process (no
server or network needed); ``--server URL`` targets a running instance
instead, in which case request paths refer to the server's filesystem.

Exit codes: 0 success, 1 validation/configuration errors, 2 partial
failure (some elicitations failed; artifacts were still written).
"""

from __future__ import annotations

import asyncio
import json
import sys
from pathlib import Path

import click
import httpx

from .errors import AuditError
from .experiment import ExperimentPlan, load_rules, plan_from_toml

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_PARTIAL = 2


def log(message: str) -> None:
    click.echo(message, err=True)


class ServiceClient:
    """Thin HTTP client; in-process ASGI by default, remote with --server."""

    def __init__(self, server: str | None = None):
        self.server = server
        if server:
            self._client = httpx.Client(base_url=server.rstrip("/"), timeout=None)
        else:
            from .service.app import app

            self._app = app
            self._client = None

    def post(self, path: str, payload: dict) -> httpx.Response:
        if self._client is not None:
            return self._client.post(path, json=payload)

        async def go() -> httpx.Response:
            transport = httpx.ASGITransport(app=self._app)
            async with httpx.AsyncClient(
                transport=transport, base_url="http://screenaudit.local", timeout=None
            ) as client:
                return await client.post(path, json=payload)

        return asyncio.run(go())

    def call(self, path: str, payload: dict) -> dict:
        response = self.post(path, payload)
        if response.status_code >= 400:
            try:
                body = response.json()
            except json.JSONDecodeError:
                body = {"code": "HTTP_ERROR", "message": response.text[:500]}
            code = body.get("code", "HTTP_ERROR")
            message = body.get("message", "request failed")
            log(f"error [{code}]: {message}")
            raise SystemExit(EXIT_ERROR)
        return response.json()


def _load_plan(config: str | None, seed, parallelism, cache_dir, out) -> ExperimentPlan:
    if not config:
        log("error: --config <plan.toml> is required for this command")
        raise SystemExit(EXIT_ERROR)
    try:
        plan = plan_from_toml(config)
    except (AuditError, OSError, ValueError) as exc:
        log(f"error: cannot load plan {config}: {exc}")
        raise SystemExit(EXIT_ERROR)
    if seed is not None:
        plan.run.master_seed = seed
    if parallelism is not None:
        plan.run.parallelism = parallelism
    if cache_dir is not None:
        plan.run.cache_dir = str(Path(cache_dir).resolve())
    if out is not None:
        plan.run.output_dir = str(Path(out).resolve())
    return plan


def common_options(fn):
    fn = click.option("--config", type=click.Path(), help="Plan file (TOML).")(fn)
    fn = click.option("--seed", type=int, default=None, help="Override master seed.")(fn)
    fn = click.option("--parallelism", type=int, default=None, help="Worker bound.")(fn)
    fn = click.option("--cache-dir", type=click.Path(), default=None)(fn)
    fn = click.option("--out", type=click.Path(), default=None, help="Output directory.")(fn)
    fn = click.option("--server", default=None, help="Remote service URL (default: in-process).")(fn)
    return fn


@click.group()
def main() -> None:
    """Correspondence-experiment bias audits for LLM candidate screeners."""


@main.command()
@common_options
def redact(config, seed, parallelism, cache_dir, out, server) -> None:
    """Redact the raw corpus into placeholder dossiers."""
    plan = _load_plan(config, seed, parallelism, cache_dir, out)
    if not plan.corpus.dossier_dir or not plan.corpus.rules_file:
        log("error: plan needs corpus.dossier_dir and corpus.rules_file")
        raise SystemExit(EXIT_ERROR)
    target = Path(out) if out else Path(plan.corpus.redacted_dir or "redacted")
    target.mkdir(parents=True, exist_ok=True)
    rules = load_rules(plan.corpus.rules_file)
    client = ServiceClient(server)
    count = 0
    for path in sorted(Path(plan.corpus.dossier_dir).glob("*.json")):
        dossier = json.loads(path.read_text("utf-8"))
        dossier_id = dossier["id"]
        if dossier_id not in rules:
            log(f"error: no redaction rules for dossier {dossier_id}")
            raise SystemExit(EXIT_ERROR)
        result = client.call(
            "/dossiers/redact",
            {"dossier": dossier, "rules": rules[dossier_id].model_dump(mode="json")},
        )
        (target / f"{dossier_id}.json").write_text(
            json.dumps(result, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        count += 1
    log(f"redacted {count} dossiers -> {target}")


@main.command("catalog-build")
@click.option("--names", "names_csv", type=click.Path(exists=True), required=True,
              help="Labeled names CSV (first,last,race,gender).")
@click.option("--catalog-out", type=click.Path(), required=True)
@click.option("--penalty", type=float, default=1.0, show_default=True)
@click.option("--embedder-kind", type=click.Choice(["simulated", "openai_compatible"]),
              default="simulated", show_default=True)
@click.option("--base-url", default="")
@click.option("--api-key-env", default="")
@click.option("--embed-model", default="text-embedding-small", show_default=True)
@common_options
def catalog_build(names_csv, catalog_out, penalty, embedder_kind, base_url,
                  api_key_env, embed_model, config, seed, parallelism, cache_dir,
                  out, server) -> None:
    """Build the signaling-name catalog from a labeled name list."""
    from .identity import load_labeled_names_csv

    rows = load_labeled_names_csv(names_csv)
    client = ServiceClient(server)
    payload = {
        "rows": rows,
        "penalty": penalty,
        "embedder": {
            "kind": embedder_kind,
            "base_url": base_url,
            "api_key_env": api_key_env,
            "embed_model": embed_model,
        },
        "cache_dir": str(Path(cache_dir).resolve()) if cache_dir else None,
    }
    catalog = client.call("/catalog/build", payload)
    target = Path(catalog_out)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(json.dumps(catalog, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    log(f"catalog with {len(catalog['cells'])} cells -> {target}")


@main.command()
@common_options
def synthesize(config, seed, parallelism, cache_dir, out, server) -> None:
    """Write the eight synthetic variants of every redacted dossier."""
    plan = _load_plan(config, seed, parallelism, cache_dir, out)
    if not plan.corpus.redacted_dir:
        log("error: plan needs corpus.redacted_dir")
        raise SystemExit(EXIT_ERROR)
    target = Path(plan.run.output_dir) / "synthetic"
    target.mkdir(parents=True, exist_ok=True)
    client = ServiceClient(server)
    catalog = None
    if plan.catalog_path:
        catalog = json.loads(Path(plan.catalog_path).read_text("utf-8"))
    count = 0
    for path in sorted(Path(plan.corpus.redacted_dir).glob("*.json")):
        redacted = json.loads(path.read_text("utf-8"))
        result = client.call(
            "/dossiers/expand",
            {"redacted": redacted, "catalog": catalog, "seed": plan.run.master_seed},
        )
        for entry in result["cells"]:
            dossier = entry["dossier"]
            name = dossier["id"].replace("/", "-").replace("::", "__")
            (target / f"{name}.json").write_text(
                json.dumps(dossier, indent=2, sort_keys=True) + "\n", encoding="utf-8"
            )
            count += 1
    log(f"wrote {count} synthetic dossiers -> {target}")


@main.command("audit-run")
@click.option("--dry-run", is_flag=True, help="Print the expanded plan; no elicitation.")
@common_options
def audit_run(dry_run, config, seed, parallelism, cache_dir, out, server) -> None:
    """Run the correspondence audit over the redacted corpus."""
    plan = _load_plan(config, seed, parallelism, cache_dir, out)
    client = ServiceClient(server)
    if dry_run:
        result = client.call("/plans/expand", {"plan": plan.model_dump(mode="json")})
        for item in result["items"]:
            click.echo(
                f"{item['source_id']} {item['cell']} {item['model_id']} "
                f"{item['condition']} rep{item['replicate']}"
            )
        log(f"dry run: {result['count']} planned requests, no network calls made")
        return
    result = client.call("/audit/run", {"plan": plan.model_dump(mode="json")})
    log(
        f"audit complete: {result['rows']} rows, {result['refusal_count']} refusals "
        f"of {result['planned']} planned -> {result['ratings_csv']}"
    )
    if result["refusal_count"] > 0:
        raise SystemExit(EXIT_PARTIAL)


@main.command("check-manipulation")
@common_options
def check_manipulation(config, seed, parallelism, cache_dir, out, server) -> None:
    """Elicit perceived race/gender and compare against intent."""
    plan = _load_plan(config, seed, parallelism, cache_dir, out)
    client = ServiceClient(server)
    result = client.call("/audit/manipulation", {"plan": plan.model_dump(mode="json")})
    for model_id, matrices in sorted(result["matrices"].items()):
        log(
            f"{model_id}: gender agreement {matrices['gender']['agreement']:.3f}, "
            f"race agreement {matrices['race']['agreement']:.3f}"
        )
    log(f"manipulation check -> {result['output_path']}")


@main.command()
@click.option("--ratings", type=click.Path(), default=None,
              help="Ratings CSV (default: <out>/ratings.csv).")
@click.option("--n-boot", type=int, default=None, help="Bootstrap replicates.")
@common_options
def analyze(ratings, n_boot, config, seed, parallelism, cache_dir, out, server) -> None:
    """Compute adverse-impact ratios and standardized effects from ratings."""
    plan = _load_plan(config, seed, parallelism, cache_dir, out)
    ratings_path = ratings or str(Path(plan.run.output_dir) / "ratings.csv")
    client = ServiceClient(server)
    result = client.call(
        "/analyze",
        {
            "ratings_csv": str(Path(ratings_path).resolve()),
            "output_dir": plan.run.output_dir,
            "thresholds": plan.run.thresholds,
            "n_boot": n_boot if n_boot is not None else plan.run.bootstrap_samples,
            "seed": plan.run.master_seed,
        },
    )
    log(f"analysis -> {result['output_path']}")


@main.command()
@common_options
def blinding(config, seed, parallelism, cache_dir, out, server) -> None:
    """Compare adverse impact on unmodified vs blinded real dossiers."""
    plan = _load_plan(config, seed, parallelism, cache_dir, out)
    client = ServiceClient(server)
    result = client.call("/audit/blinding", {"plan": plan.model_dump(mode="json")})
    log(
        f"blinding comparison: {result['rows']} rows, "
        f"{result['refusal_count']} refusals -> {result['output_path']}"
    )
    if result["refusal_count"] > 0:
        raise SystemExit(EXIT_PARTIAL)


@main.command()
@click.option("--k", type=int, default=10, show_default=True)
@click.option("--split-half", is_flag=True)
@common_options
def predictability(k, split_half, config, seed, parallelism, cache_dir, out, server) -> None:
    """Estimate how predictable race/gender are from (redacted) materials."""
    plan = _load_plan(config, seed, parallelism, cache_dir, out)
    client = ServiceClient(server)
    result = client.call(
        "/audit/predictability",
        {"plan": plan.model_dump(mode="json"), "k": k, "split_half": split_half},
    )
    for row in result["results"]:
        auc = row.get("auc")
        shown = f"{auc:.3f}" if auc is not None else f"error:{row.get('error')}"
        log(f"{row['redaction']:<11} {row['materials']:<11} {row['attribute']:<14} {shown}")
    log(f"predictability -> {result['output_path']}")


@main.command()
@click.option("--bias", multiple=True,
              help="Injected offset, e.g. --bias female=+0.5 (repeatable).")
@click.option("--n", "n_dossiers", type=int, default=200, show_default=True)
@click.option("--noise-sd", type=float, default=0.25, show_default=True)
@click.option("--channel", type=click.Choice(["name_only", "full_content"]),
              default="full_content", show_default=True)
@click.option("--n-boot", type=int, default=0, help="Bootstrap replicates for CIs.")
@common_options
def simulate(bias, n_dossiers, noise_sd, channel, n_boot, config, seed, parallelism,
             cache_dir, out, server) -> None:
    """Validate the pipeline by recovering a known injected bias."""
    offsets = {}
    for item in bias:
        if "=" not in item:
            log(f"error: --bias must look like group=+0.5, got {item!r}")
            raise SystemExit(EXIT_ERROR)
        group, value = item.split("=", 1)
        try:
            offsets[group.strip()] = float(value)
        except ValueError:
            log(f"error: bad offset value in {item!r}")
            raise SystemExit(EXIT_ERROR)
    workdir = Path(out) if out else Path("simulate_out")
    client = ServiceClient(server)
    result = client.call(
        "/simulate",
        {
            "workdir": str(workdir.resolve()),
            "offsets": offsets,
            "n_dossiers": n_dossiers,
            "noise_sd": noise_sd,
            "seed": seed or 0,
            "signal_channel": channel,
            "parallelism": parallelism or 1,
            "n_boot": n_boot,
        },
    )
    for row in result["report"]["recovery"]:
        log(
            f"{row['term']:<10} injected {row['injected_standardized']:+.4f} SD"
            f"  recovered {row['recovered_standardized']:+.4f} SD"
            f"  gap {row['gap']:+.4f}"
        )
    log(f"recovery report -> {result['output_path']}")


@main.command()
@common_options
def report(config, seed, parallelism, cache_dir, out, server) -> None:
    """Assemble report.json / report.txt / figure CSVs from prior runs."""
    if config:
        plan = _load_plan(config, seed, parallelism, cache_dir, out)
        output_dir = plan.run.output_dir
        master_seed = plan.run.master_seed
    elif out:
        output_dir = str(Path(out).resolve())
        master_seed = seed or 0
    else:
        log("error: provide --config or --out")
        raise SystemExit(EXIT_ERROR)
    client = ServiceClient(server)
    result = client.call(
        "/report/assemble", {"output_dir": output_dir, "master_seed": master_seed}
    )
    log(f"report -> {result['report_json']} and {result['report_txt']}")


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8010, show_default=True)
def serve(host, port) -> None:
    """Run the audit service with uvicorn."""
    try:
        import uvicorn
    except ImportError:
        log("error: uvicorn is not installed (pip install screenaudit[server])")
        raise SystemExit(EXIT_ERROR)
    from .service.app import app

    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    sys.exit(main())
