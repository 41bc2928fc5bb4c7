"""Deterministic simulated rater, perceiver, and embedder.

The simulated provider is the validation oracle for the audit pipeline:
it produces ratings whose group effects are known by construction (the
configured offsets), so the downstream estimators can be checked against
injected ground truth without touching a network.

Score construction: a hash of the demographically neutralized prompt
content gives a base score shared by all eight synthetic variants of one
source dossier; group offsets and optional Gaussian noise (both derived
from deterministic hashes) are added, and the sum is rounded and clamped
to the 1-5 scale.
"""

from __future__ import annotations

import hashlib
import math
import re

import numpy as np
from scipy.special import ndtri

from .elicitation import PERCEPTION_FORMAT_MARKER, RATING_FORMAT_MARKER
from .identity import DemographicCell, NameCatalog, all_cells, default_catalog
from .provider import (
    EMBEDDING_DIM,
    ChatExchange,
    ChatRequest,
    ClientStats,
    ResponseCache,
    SimulatedRaterSpec,
    cache_key,
    canonical_chat_payload,
    canonical_embed_payload,
    _utcnow,
)

BASE_LOW = 1.2
BASE_SPAN = 3.0  # integer-width span keeps rounding unbiased for offsets

REFUSAL_TEXT = (
    "I'm sorry, but I can't provide this assessment. Evaluating candidates "
    "in this way would not be appropriate for me."
)

NEUTRAL_TOKEN = "PERSON"


def hash_uniform(*parts: object) -> float:
    """Deterministic uniform draw in (0, 1) from the given parts."""
    blob = "\x1f".join(str(p) for p in parts).encode("utf-8")
    h = int.from_bytes(hashlib.sha256(blob).digest()[:8], "big")
    return (h + 0.5) / 2.0**64


def parse_tag(tag: str) -> dict[str, str]:
    """Parse 'key=value;key=value' tracing tags."""
    out: dict[str, str] = {}
    for part in tag.split(";"):
        if "=" in part:
            key, value = part.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def format_tag(**fields: object) -> str:
    return ";".join(f"{k}={v}" for k, v in fields.items() if v is not None)


class SimulatedProvider:
    """Drop-in provider whose behavior is a pure function of its spec.

    With noise_sd = 0 and refusal_rate = 0 the response depends only on
    the (neutralized) prompt text and the detected demographic group.
    """

    def __init__(
        self,
        provider_id: str,
        spec: SimulatedRaterSpec,
        catalog: NameCatalog | None = None,
        cache: ResponseCache | None = None,
    ):
        self.provider_id = provider_id
        self.spec = spec
        if catalog is None:
            catalog = (
                NameCatalog.from_file(spec.catalog_path)
                if spec.catalog_path
                else default_catalog()
            )
        self.catalog = catalog
        self.cache = cache
        self.stats = ClientStats()
        self._neutralize_re = self._build_neutralizer()
        self._cell_name_res = self._build_cell_detectors()

    # -- text neutralization and group detection --------------------------

    def _build_neutralizer(self) -> re.Pattern:
        phrases: set[str] = set()
        for pairs in self.catalog.cells.values():
            for p in pairs:
                phrases.add(f"{p.first} {p.last}")
                phrases.add(p.first)
                phrases.add(p.last)
        for c in self.catalog.colleges:
            phrases.add(c.name)
            phrases.add(f"{c.city}, {c.state}")
        phrases.update(["she", "he", "him", "her", "hers", "his"])
        ordered = sorted(phrases, key=len, reverse=True)
        words = "|".join(re.escape(p) for p in ordered)
        # Titles end in "." so they get their own boundary-free alternative.
        return re.compile(rf"\b(?:{words})\b|\b(?:Mr|Mrs|Ms)\.", re.IGNORECASE)

    def _build_cell_detectors(self) -> dict[str, re.Pattern]:
        out = {}
        for key, pairs in self.catalog.cells.items():
            names = sorted((f"{p.first} {p.last}" for p in pairs), key=len, reverse=True)
            out[key] = re.compile(
                r"\b(?:" + "|".join(re.escape(n) for n in names) + r")\b"
            )
        return out

    def neutralize(self, text: str) -> str:
        return self._neutralize_re.sub(NEUTRAL_TOKEN, text)

    def detect_cell(self, text: str) -> DemographicCell | None:
        for cell in all_cells():
            if self._cell_name_res[cell.key].search(text):
                return cell
        return None

    def _offset_for(self, cell: DemographicCell | None) -> float:
        if cell is None:
            return 0.0
        total = 0.0
        for key, value in self.spec.group_offsets.items():
            if key in (cell.key, cell.race.value, cell.gender.value):
                total += value
        return total

    # -- provider interface ------------------------------------------------

    def complete(self, request: ChatRequest) -> ChatExchange:
        key = cache_key(canonical_chat_payload(self.provider_id, request))
        if self.cache is not None:
            cached = self.cache.get(self.provider_id, key)
            if cached is not None:
                self.stats.record(hit=True)
                return ChatExchange.model_validate(cached)
        text = self._respond(request, key)
        exchange = ChatExchange(
            request=request,
            response_text=text,
            provider_id=self.provider_id,
            timestamp=_utcnow(),
            cache_key=key,
        )
        self.stats.record(hit=False)
        if self.cache is not None:
            self.cache.put(self.provider_id, key, exchange.model_dump(mode="json"))
        return exchange

    def _respond(self, request: ChatRequest, key: str) -> str:
        prompt = "\n".join(m.content for m in request.messages)
        if self.spec.refusal_rate > 0 and (
            hash_uniform(self.spec.seed, "refusal", key) < self.spec.refusal_rate
        ):
            return REFUSAL_TEXT

        tag = parse_tag(request.request_tag)
        intended = (
            DemographicCell.from_key(tag["group"]) if "group" in tag else None
        )
        if PERCEPTION_FORMAT_MARKER in prompt or (
            RATING_FORMAT_MARKER not in prompt and "race" in prompt.lower()
        ):
            return self._perceive(prompt, intended)
        return self._rate(prompt, intended, key)

    def _visible_cell(
        self, prompt: str, intended: DemographicCell | None
    ) -> DemographicCell | None:
        """The group the rater 'sees' given its signal channel."""
        if self.spec.signal_channel == "full_content":
            return intended if intended is not None else self.detect_cell(prompt)
        # name_only: the intended cell counts only when one of its catalog
        # names is actually visible in the text.
        if intended is not None:
            if self._cell_name_res[intended.key].search(prompt):
                return intended
            return None
        return self.detect_cell(prompt)

    def _rate(self, prompt: str, intended: DemographicCell | None, key: str) -> str:
        base = BASE_LOW + BASE_SPAN * hash_uniform(
            self.spec.seed, "base", self.neutralize(prompt)
        )
        offset = self._offset_for(self._visible_cell(prompt, intended))
        noise = 0.0
        if self.spec.noise_sd > 0:
            noise = self.spec.noise_sd * float(
                ndtri(hash_uniform(self.spec.seed, "noise", key))
            )
        hire = _clamp_round(base + offset + noise)
        aux = {}
        for label in ("Experience", "Professionalism", "Fit"):
            jitter = 0.35 * float(
                ndtri(hash_uniform(self.spec.seed, "aux", label, key))
            )
            aux[label] = _clamp_round(base + jitter)
        return (
            "The candidate presents relevant preparation and classroom "
            "experience for the role.\n\n"
            f"Experience: {aux['Experience']}\n"
            f"Professionalism: {aux['Professionalism']}\n"
            f"Fit: {aux['Fit']}\n"
            f"Hire: {hire}"
        )

    def _perceive(self, prompt: str, intended: DemographicCell | None) -> str:
        cell = self._visible_cell(prompt, intended)
        if cell is None:
            return "I cannot determine the applicant's race or gender from these materials."
        return f"Race: {cell.race.value}\nGender: {cell.gender.value}"

    def embed(self, texts: list[str], model: str | None = None) -> list[list[float]]:
        """Hash-derived pseudo-embeddings: deterministic per text, no signal."""
        model = model or "simulated-embedding"
        out: list[list[float]] = []
        for text in texts:
            key = cache_key(canonical_embed_payload(self.provider_id, model, text))
            if self.cache is not None:
                cached = self.cache.get(self.provider_id, key)
                if cached is not None:
                    self.stats.record(hit=True)
                    out.append(cached["vector"])
                    continue
            seed = int.from_bytes(
                hashlib.sha256(f"{self.spec.seed}\x1f{model}\x1f{text}".encode()).digest()[:8],
                "big",
            )
            rng = np.random.default_rng(seed)
            vec = rng.standard_normal(EMBEDDING_DIM)
            vec = (vec / np.linalg.norm(vec)).tolist()
            self.stats.record(hit=False)
            if self.cache is not None:
                self.cache.put(
                    self.provider_id,
                    key,
                    {"vector": vec, "model": model, "timestamp": _utcnow()},
                )
            out.append(vec)
        return out


def _clamp_round(x: float) -> int:
    return max(1, min(5, int(math.floor(x + 0.5))))
