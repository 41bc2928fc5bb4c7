"""Demographic cells, signaling-name catalogs, and identity sampling.

The catalog builder reproduces the name-selection procedure: embed first
and last names (256 dimensions each), train one penalized logistic model
per (race, gender) cell on the concatenated 512-dimensional features, rank
candidate pairs by predicted cell probability, and keep the top twenty
pairs per cell after discarding duplicate first names.
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np
from pydantic import BaseModel, Field

from .dossier import (
    College,
    Dossier,
    Gender,
    Race,
    RedactedDossier,
    SyntheticIdentity,
    instantiate,
)
from .errors import CatalogError
from .provider import EMBEDDING_DIM
from .stats import PenalizedLogisticModel, fit_penalized_logistic

CATALOG_SIZE = 20


class DemographicCell(BaseModel):
    race: Race
    gender: Gender

    model_config = {"frozen": True}

    @property
    def key(self) -> str:
        return f"{self.race.value}/{self.gender.value}"

    @classmethod
    def from_key(cls, key: str) -> "DemographicCell":
        race, gender = key.split("/")
        return cls(race=Race(race), gender=Gender(gender))


def all_cells() -> list[DemographicCell]:
    """The eight cells of the factorial design, in canonical order."""
    return [
        DemographicCell(race=r, gender=g)
        for r in sorted(Race, key=lambda x: x.value)
        for g in sorted(Gender, key=lambda x: x.value)
    ]


class NamePair(BaseModel):
    first: str
    last: str


class NameCandidate(BaseModel):
    """A name pair with its embeddings and (for training) source labels."""

    first: str
    last: str
    first_embedding: list[float]
    last_embedding: list[float]
    race: Race | None = None
    gender: Gender | None = None

    def features(self) -> np.ndarray:
        if len(self.first_embedding) != EMBEDDING_DIM or len(self.last_embedding) != EMBEDDING_DIM:
            raise CatalogError(
                f"candidate {self.first} {self.last} embeddings must be "
                f"{EMBEDDING_DIM}+{EMBEDDING_DIM} dimensions, got "
                f"{len(self.first_embedding)}+{len(self.last_embedding)}",
                code="DIMENSION_MISMATCH",
            )
        return np.asarray(self.first_embedding + self.last_embedding, dtype=float)


DEFAULT_COLLEGES = [
    College(name="The University of Houston", city="Houston", state="Texas"),
    College(name="The University of Texas at Arlington", city="Arlington", state="Texas"),
    College(name="The University of North Texas", city="Denton", state="Texas"),
]


class NameCatalog(BaseModel):
    """Twenty distinct-first-name pairs per cell plus the college list."""

    cells: dict[str, list[NamePair]]
    colleges: list[College] = Field(default_factory=lambda: list(DEFAULT_COLLEGES))
    provenance: dict = Field(default_factory=dict)

    def validate_shape(self) -> None:
        expected = {c.key for c in all_cells()}
        if set(self.cells) != expected:
            raise CatalogError(
                f"catalog must cover exactly the 8 cells; got {sorted(self.cells)}",
                code="INSUFFICIENT_CANDIDATES",
            )
        for key, pairs in self.cells.items():
            firsts = {p.first.casefold() for p in pairs}
            if len(pairs) != CATALOG_SIZE or len(firsts) != CATALOG_SIZE:
                raise CatalogError(
                    f"cell {key} needs {CATALOG_SIZE} pairs with distinct first names, "
                    f"got {len(pairs)} pairs / {len(firsts)} distinct firsts",
                    code="INSUFFICIENT_CANDIDATES",
                )

    def pairs_for(self, cell: DemographicCell) -> list[NamePair]:
        return self.cells[cell.key]

    def all_names(self) -> dict[str, str]:
        """Full name -> cell key, for every catalog pair."""
        return {
            f"{p.first} {p.last}": key for key, pairs in self.cells.items() for p in pairs
        }

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_file(cls, path: str | Path) -> "NameCatalog":
        catalog = cls.model_validate_json(Path(path).read_text(encoding="utf-8"))
        catalog.validate_shape()
        return catalog


def default_catalog() -> NameCatalog:
    """The catalog shipped with the package (configuration, not ground truth)."""
    root = resources.files("screenaudit")
    text = root.joinpath("data").joinpath("catalog_default.json").read_text("utf-8")
    catalog = NameCatalog.model_validate_json(text)
    catalog.validate_shape()
    return catalog


# ---------------------------------------------------------------------------
# Ranking and catalog construction
# ---------------------------------------------------------------------------


def rank_names(
    candidates: Sequence[NameCandidate],
    cell: DemographicCell,
    model: PenalizedLogisticModel,
) -> list[tuple[NameCandidate, float]]:
    """Candidates sorted by predicted cell-membership probability, descending;
    ties broken lexicographically by (last, first)."""
    del cell  # the model is already cell-specific; kept for call-site clarity
    feats = np.stack([c.features() for c in candidates])
    probs = model.predict_proba(feats)
    order = sorted(
        range(len(candidates)),
        key=lambda i: (-probs[i], candidates[i].last, candidates[i].first),
    )
    return [(candidates[i], float(probs[i])) for i in order]


class Embedder(Protocol):
    def embed(self, texts: list[str], model: str | None = None) -> list[list[float]]: ...


def embed_candidates(
    rows: Sequence[dict], embedder: Embedder, model: str | None = None
) -> list[NameCandidate]:
    """Attach first/last embeddings to labeled name rows
    ({first, last, race, gender})."""
    firsts = [r["first"] for r in rows]
    lasts = [r["last"] for r in rows]
    first_vecs = embedder.embed(firsts, model=model)
    last_vecs = embedder.embed(lasts, model=model)
    out = []
    for r, fv, lv in zip(rows, first_vecs, last_vecs):
        out.append(
            NameCandidate(
                first=r["first"],
                last=r["last"],
                first_embedding=fv,
                last_embedding=lv,
                race=Race(r["race"]) if r.get("race") else None,
                gender=Gender(r["gender"]) if r.get("gender") else None,
            )
        )
    return out


def build_catalog(
    candidates: Sequence[NameCandidate],
    penalty: float = 1.0,
    colleges: Sequence[College] | None = None,
) -> NameCatalog:
    """Train one one-vs-rest model per cell and keep the top twenty
    distinct-first-name pairs for each.

    Candidates must carry (race, gender) labels. Deterministic for
    identical inputs.
    """
    labeled = [c for c in candidates if c.race is not None and c.gender is not None]
    if len(labeled) < CATALOG_SIZE:
        raise CatalogError(
            f"need at least {CATALOG_SIZE} labeled candidates, got {len(labeled)}",
            code="INSUFFICIENT_CANDIDATES",
        )
    feats = np.stack([c.features() for c in labeled])
    cells: dict[str, list[NamePair]] = {}
    scores: dict[str, list[float]] = {}
    for cell in all_cells():
        y = np.array(
            [1.0 if (c.race == cell.race and c.gender == cell.gender) else 0.0 for c in labeled]
        )
        if y.sum() == 0:
            raise CatalogError(
                f"no labeled candidates for cell {cell.key}",
                code="INSUFFICIENT_CANDIDATES",
            )
        model = fit_penalized_logistic(feats, y, penalty=penalty)
        ranked = rank_names(labeled, cell, model)
        chosen: list[NamePair] = []
        chosen_probs: list[float] = []
        seen_firsts: set[str] = set()
        for cand, prob in ranked:
            if cand.first.casefold() in seen_firsts:
                continue
            chosen.append(NamePair(first=cand.first, last=cand.last))
            chosen_probs.append(prob)
            seen_firsts.add(cand.first.casefold())
            if len(chosen) == CATALOG_SIZE:
                break
        if len(chosen) < CATALOG_SIZE:
            raise CatalogError(
                f"cell {cell.key} has only {len(chosen)} distinct-first-name pairs",
                code="INSUFFICIENT_CANDIDATES",
                cell=cell.key,
            )
        cells[cell.key] = chosen
        scores[cell.key] = chosen_probs
    catalog = NameCatalog(
        cells=cells,
        colleges=list(colleges) if colleges is not None else list(DEFAULT_COLLEGES),
        provenance={
            "method": "penalized-logistic ranking over name embeddings",
            "penalty": penalty,
            "n_candidates": len(labeled),
            "selected_probabilities": scores,
        },
    )
    catalog.validate_shape()
    return catalog


# ---------------------------------------------------------------------------
# Sampling and factorial expansion
# ---------------------------------------------------------------------------


def sample_identity(
    catalog: NameCatalog, cell: DemographicCell, rng: np.random.Generator
) -> SyntheticIdentity:
    """Uniform draw of a name pair from the cell's twenty and a college from
    the configured list (independent of cell)."""
    pairs = catalog.pairs_for(cell)
    pair = pairs[int(rng.integers(0, len(pairs)))]
    college = catalog.colleges[int(rng.integers(0, len(catalog.colleges)))]
    return SyntheticIdentity.build(
        race=cell.race,
        gender=cell.gender,
        first_name=pair.first,
        last_name=pair.last,
        college=college,
    )


def factorial_expand(
    redacted: RedactedDossier,
    catalog: NameCatalog,
    rng: np.random.Generator,
) -> list[tuple[DemographicCell, SyntheticIdentity, Dossier]]:
    """One instantiated dossier per demographic cell (eight in total), all
    sharing the redacted source's id as the clustering key."""
    out = []
    for cell in all_cells():
        identity = sample_identity(catalog, cell, rng)
        dossier = instantiate(redacted, identity)
        out.append((cell, identity, dossier))
    return out


def load_labeled_names_csv(path: str | Path) -> list[dict]:
    """Read the labeled-name training CSV (columns first,last,race,gender)."""
    import csv

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"first", "last", "race", "gender"}
        if not required.issubset(reader.fieldnames or ()):
            raise CatalogError(
                f"training CSV must have columns {sorted(required)}",
                code="INSUFFICIENT_CANDIDATES",
            )
        return [dict(row) for row in reader]
