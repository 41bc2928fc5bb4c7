import json
from pathlib import Path

import pytest

from screenaudit.dossier import Dossier, RedactionRuleSet
from screenaudit.identity import default_catalog

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return DATA_DIR


@pytest.fixture(scope="session")
def fixture_corpus() -> list[tuple[Dossier, RedactionRuleSet]]:
    """The handcrafted corpus plus its per-dossier redaction rules."""
    rules_doc = json.loads((DATA_DIR / "rules.json").read_text("utf-8"))
    out = []
    for path in sorted((DATA_DIR / "corpus").glob("*.json")):
        dossier = Dossier.model_validate_json(path.read_text("utf-8"))
        out.append((dossier, RedactionRuleSet.model_validate(rules_doc[dossier.id])))
    return out


@pytest.fixture(scope="session")
def catalog():
    return default_catalog()
