import json
import math

import numpy as np
import pytest

from screenaudit.dossier import (
    Dossier,
    Gender,
    PLACEHOLDER_RE,
    Race,
    RedactionRuleSet,
    TranscriptTurn,
    redact,
)
from screenaudit.errors import CatalogError
from screenaudit.identity import (
    CATALOG_SIZE,
    DemographicCell,
    NameCandidate,
    all_cells,
    build_catalog,
    default_catalog,
    factorial_expand,
    rank_names,
    sample_identity,
)
from screenaudit.stats import PenalizedLogisticModel, fit_penalized_logistic

DIM = 256


def make_candidate(first, last, signal, race=None, gender=None, seed=0):
    """Embedding with the cell signal planted in coordinate 0."""
    rng = np.random.default_rng(abs(hash((first, last, seed))) % 2**32)
    fe = (0.05 * rng.standard_normal(DIM)).tolist()
    le = (0.05 * rng.standard_normal(DIM)).tolist()
    fe[0] += signal
    le[0] += signal
    return NameCandidate(
        first=first, last=last, first_embedding=fe, last_embedding=le,
        race=race, gender=gender,
    )


def test_all_cells_shape():
    cells = all_cells()
    assert len(cells) == 8
    assert len({c.key for c in cells}) == 8
    assert {c.race for c in cells} == set(Race)
    assert {c.gender for c in cells} == set(Gender)


def test_rank_names_sorts_by_probability():
    model = PenalizedLogisticModel(
        weights=np.r_[[10.0], np.zeros(511)],
        intercept=0.0,
        penalty=1.0,
        feature_means=np.zeros(512),
        feature_sds=np.ones(512),
    )
    strong = make_candidate("Amy", "Stone", 1.0)
    weak = make_candidate("Bea", "Ash", -1.0)
    ranked = rank_names([weak, strong], DemographicCell(race=Race.WHITE, gender=Gender.FEMALE), model)
    assert [c.first for c, _ in ranked] == ["Amy", "Bea"]
    assert ranked[0][1] > 0.5 > ranked[1][1]


def test_rank_names_tie_break_lexicographic():
    model = PenalizedLogisticModel(
        weights=np.zeros(512),
        intercept=0.0,
        penalty=1.0,
        feature_means=np.zeros(512),
        feature_sds=np.ones(512),
    )
    cands = [
        make_candidate("Zoe", "Young", 0.3),
        make_candidate("Abe", "Young", 0.1),
        make_candidate("Mia", "Archer", -0.2),
    ]
    ranked = rank_names(cands, DemographicCell(race=Race.WHITE, gender=Gender.FEMALE), model)
    # all-zero weights: every probability 0.5, order is (last, first)
    assert [p for _, p in ranked] == [0.5, 0.5, 0.5]
    assert [(c.last, c.first) for c, _ in ranked] == [
        ("Archer", "Mia"), ("Young", "Abe"), ("Young", "Zoe"),
    ]


def test_rank_names_dimension_mismatch():
    bad = NameCandidate(
        first="A", last="B", first_embedding=[0.0] * 13, last_embedding=[0.0] * DIM
    )
    model = PenalizedLogisticModel(
        weights=np.zeros(512), intercept=0.0, penalty=1.0,
        feature_means=np.zeros(512), feature_sds=np.ones(512),
    )
    with pytest.raises(CatalogError) as exc:
        rank_names([bad], DemographicCell(race=Race.WHITE, gender=Gender.FEMALE), model)
    assert exc.value.code == "DIMENSION_MISMATCH"


def test_rank_names_top20_matches_bruteforce_oracle():
    """50 linearly separable candidates: the trained model's top-20 equals an
    exhaustive elementwise probability computation."""
    cell = DemographicCell(race=Race.BLACK, gender=Gender.FEMALE)
    cands = []
    for i in range(25):
        cands.append(
            make_candidate(f"In{i}", f"Cell{i}", 1.0, race=Race.BLACK, gender=Gender.FEMALE)
        )
    for i in range(25):
        cands.append(make_candidate(f"Out{i}", f"Rest{i}", -1.0, race=Race.WHITE, gender=Gender.MALE))
    X = np.stack([c.features() for c in cands])
    y = np.array([1.0] * 25 + [0.0] * 25)
    model = fit_penalized_logistic(X, y, penalty=1.0)

    # Oracle: explicit per-candidate probability via the model equation.
    def prob(c):
        z = (np.asarray(c.first_embedding + c.last_embedding) - model.feature_means) / model.feature_sds
        m = float(z @ model.weights + model.intercept)
        return 1.0 / (1.0 + math.exp(-m))

    oracle_top = sorted(cands, key=lambda c: (-prob(c), c.last, c.first))[:20]
    ranked_top = [c for c, _ in rank_names(cands, cell, model)[:20]]
    assert [(c.first, c.last) for c in ranked_top] == [
        (c.first, c.last) for c in oracle_top
    ]


# --- build_catalog ----------------------------------------------------------


def labeled_pool(per_cell=24, dup_first_in=None):
    cands = []
    for cell_index, cell in enumerate(all_cells()):
        for i in range(per_cell):
            first = f"{cell.race.value[:2]}{cell.gender.value[:1]}F{i}"
            if dup_first_in == cell.key and i == 1:
                first = f"{cell.race.value[:2]}{cell.gender.value[:1]}F0"  # duplicate of i=0
            cands.append(
                make_candidate(
                    first,
                    f"L{cell_index}x{i}",
                    2.0 if True else 0,
                    race=cell.race,
                    gender=cell.gender,
                    seed=cell_index * 1000 + i,
                )
            )
    # separable: add cell-specific coordinate bumps
    for idx, c in enumerate(cands):
        cell_index = idx // per_cell
        c.first_embedding[1 + cell_index] = 3.0
        c.last_embedding[1 + cell_index] = 3.0
    return cands


def test_build_catalog_skips_duplicate_first_names():
    target = all_cells()[0].key
    cands = labeled_pool(per_cell=22, dup_first_in=target)
    catalog = build_catalog(cands, penalty=1.0)
    catalog.validate_shape()
    pairs = catalog.cells[target]
    firsts = [p.first.casefold() for p in pairs]
    assert len(firsts) == len(set(firsts)) == CATALOG_SIZE


def test_build_catalog_exactly_twenty_distinct():
    cands = labeled_pool(per_cell=20)
    catalog = build_catalog(cands, penalty=1.0)
    for key, pairs in catalog.cells.items():
        assert len(pairs) == CATALOG_SIZE
        # exactly 20 distinct candidates per cell: selection == that cell's pool
        expected = {
            (c.first, c.last)
            for c in cands
            if c.race is not None and f"{c.race.value}/{c.gender.value}" == key
        }
        assert {(p.first, p.last) for p in pairs} == expected


def test_build_catalog_insufficient_candidates():
    # Ranking draws from the whole pool, so the error fires when the pool
    # holds fewer than 20 distinct first names in total.
    cells = all_cells()
    cands = []
    for i in range(32):
        cell = cells[i % 8]
        cands.append(
            make_candidate(
                f"F{i % 19}",  # only 19 distinct first names pool-wide
                f"L{i}",
                1.0,
                race=cell.race,
                gender=cell.gender,
                seed=i,
            )
        )
    with pytest.raises(CatalogError) as exc:
        build_catalog(cands, penalty=1.0)
    assert exc.value.code == "INSUFFICIENT_CANDIDATES"


def test_build_catalog_deterministic_serialization():
    cands = labeled_pool(per_cell=21)
    a = build_catalog(cands, penalty=1.0).to_json()
    b = build_catalog(cands, penalty=1.0).to_json()
    assert a == b


def test_default_catalog_shape(catalog):
    catalog.validate_shape()
    assert len(catalog.colleges) == 3
    assert {c.state for c in catalog.colleges} == {"Texas"}


# --- sampling ---------------------------------------------------------------


def test_sample_identity_seeded_determinism(catalog):
    cell = all_cells()[3]
    a = sample_identity(catalog, cell, np.random.default_rng(0))
    b = sample_identity(catalog, cell, np.random.default_rng(0))
    assert a == b
    assert a.race == cell.race and a.gender == cell.gender


def test_sample_identity_title_pronouns_consistent(catalog):
    for cell in all_cells():
        ident = sample_identity(catalog, cell, np.random.default_rng(1))
        if cell.gender == Gender.FEMALE:
            assert ident.title == "Ms." and ident.pronouns == ("she", "her", "her")
        else:
            assert ident.title == "Mr." and ident.pronouns == ("he", "him", "his")


def test_sample_identity_name_frequencies(catalog):
    """20,000 draws: every pair within 3 sigma of uniform 1/20."""
    cell = all_cells()[2]
    rng = np.random.default_rng(42)
    n = 20_000
    counts = {}
    for _ in range(n):
        ident = sample_identity(catalog, cell, rng)
        counts[(ident.first_name, ident.last_name)] = counts.get(
            (ident.first_name, ident.last_name), 0
        ) + 1
    assert len(counts) == CATALOG_SIZE
    p = 1 / CATALOG_SIZE
    sigma = math.sqrt(p * (1 - p) / n)
    for pair, c in counts.items():
        assert abs(c / n - p) <= 3 * sigma, (pair, c / n)


def test_sample_identity_college_frequencies(catalog):
    """30,000 draws: every college within 3 sigma of uniform 1/3,
    independent of cell."""
    rng = np.random.default_rng(43)
    n = 30_000
    counts = {}
    cells = all_cells()
    for i in range(n):
        ident = sample_identity(catalog, cells[i % 8], rng)
        counts[ident.college.name] = counts.get(ident.college.name, 0) + 1
    p = 1 / 3
    sigma = math.sqrt(p * (1 - p) / n)
    assert len(counts) == 3
    for name, c in counts.items():
        assert abs(c / n - p) <= 3 * sigma, (name, c / n)


# --- factorial expansion ----------------------------------------------------


def redacted_fixture():
    d = Dossier(
        id="fx",
        resume="Jordan Avery leads robotics. She tutors her peers after class.",
        transcripts=[TranscriptTurn(question_id="q1", answer="Students trust her. I am Jordan.")],
    )
    return redact(d, RedactionRuleSet(names=["Jordan Avery", "Jordan", "Avery"]))


def test_factorial_expand_covers_each_cell_once(catalog):
    out = factorial_expand(redacted_fixture(), catalog, np.random.default_rng(0))
    assert len(out) == 8
    assert [c.key for c, _, _ in out] == [c.key for c in all_cells()]
    source_ids = {d.metadata["source_id"] for _, _, d in out}
    assert source_ids == {"fx"}


def test_factorial_expand_varies_only_in_placeholder_spans(catalog):
    """Diff oracle: replacing each identity's substituted values with the
    placeholder skeleton reproduces one common skeleton."""
    red = redacted_fixture()
    out = factorial_expand(red, catalog, np.random.default_rng(5))
    skeletons = set()
    for cell, ident, dossier in out:
        text = dossier.resume + "\n##\n" + "\n".join(t.answer for t in dossier.transcripts)
        for needle, token in [
            (f"{ident.first_name} {ident.last_name}", "@NAME@"),
            (ident.first_name, "@NAME@"),
            (ident.last_name, "@NAME@"),
            (ident.title, "@T@"),
        ]:
            text = text.replace(needle, token)
        for p in [*ident.pronouns, "hers" if ident.gender == Gender.FEMALE else "his"]:
            import re

            text = re.sub(rf"\b{p}\b", "@P@", text, flags=re.IGNORECASE)
        skeletons.add(text)
    assert len(skeletons) == 1


def test_factorial_expand_seed_changes_names(catalog):
    red = redacted_fixture()
    a = factorial_expand(red, catalog, np.random.default_rng(1))
    b = factorial_expand(red, catalog, np.random.default_rng(2))
    assert [c.key for c, _, _ in a] == [c.key for c, _, _ in b]
    names_a = [(i.first_name, i.last_name) for _, i, _ in a]
    names_b = [(i.first_name, i.last_name) for _, i, _ in b]
    assert names_a != names_b  # generically different under different seeds


def test_catalog_file_roundtrip(tmp_path, catalog):
    path = tmp_path / "cat.json"
    path.write_text(catalog.to_json(), encoding="utf-8")
    from screenaudit.identity import NameCatalog

    loaded = NameCatalog.from_file(path)
    assert loaded.model_dump() == catalog.model_dump()
