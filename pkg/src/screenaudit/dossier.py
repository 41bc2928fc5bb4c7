"""Application dossiers and demographic-signal redaction.

A dossier is a resume plus interview transcripts. Redaction replaces
demographic signals (names, titles, pronouns, colleges, kin terms, manual
annotations) with typed ``[[KIND]]`` placeholders and keeps a reversible
log; instantiation fills the placeholders from a synthetic identity, and
blinding fills them with neutral surface forms.

All span arithmetic happens on NFC-normalized text; the log records byte
offsets into the UTF-8 encoding of that normalized source so logs are
deterministic across platforms.
"""

from __future__ import annotations

import re
import unicodedata
from enum import Enum
from itertools import accumulate
from typing import Callable, Optional

from pydantic import BaseModel, Field, field_validator

from .errors import PlaceholderError, RedactionError


class Race(str, Enum):
    ASIAN = "Asian"
    BLACK = "Black"
    HISPANIC = "Hispanic"
    WHITE = "White"


class Gender(str, Enum):
    FEMALE = "female"
    MALE = "male"


class PlaceholderKind(str, Enum):
    NAME_FULL = "NAME_FULL"
    NAME_FIRST = "NAME_FIRST"
    NAME_LAST = "NAME_LAST"
    TITLE = "TITLE"
    PRONOUN_SUBJECT = "PRONOUN_SUBJECT"
    PRONOUN_OBJECT = "PRONOUN_OBJECT"
    PRONOUN_POSSESSIVE = "PRONOUN_POSSESSIVE"
    COLLEGE = "COLLEGE"
    COLLEGE_LOCATION = "COLLEGE_LOCATION"
    SPOUSE = "SPOUSE"
    PARENT_ROLE = "PARENT_ROLE"
    RACE_REFERENCE = "RACE_REFERENCE"
    JOB_LOCATION = "JOB_LOCATION"
    DISTRICT_NAME = "DISTRICT_NAME"
    DISTRICT_CITY = "DISTRICT_CITY"
    DISTRICT_STATE = "DISTRICT_STATE"


PLACEHOLDER_RE = re.compile(r"\[\[([A-Z_]+)(?::(\d+))?\]\]")

# Kin-term word lists behind the automatic rules; detection is word-boundary
# anchored and case-insensitive, the log preserves original casing.
SPOUSE_WORDS = ("husband", "wife")
PARENT_WORDS = ("mother", "father", "mom", "dad")

# Next-word stoplist for the her/their determiner-vs-object heuristic:
# "her" followed by one of these (or by punctuation) reads as an object
# pronoun, otherwise as a possessive determiner.
_FUNCTION_WORDS = frozenset(
    """a an the and or but to of in on at for with about because if so then
    than there here that this those these when while after before again once
    twice later earlier first last yesterday today tomorrow now very really
    quite too also just even still yet ever never always often sometimes
    was were is are be been being as by from up down out over under how
    what why where who whom which not no nor do does did done""".split()
)


class TranscriptTurn(BaseModel):
    question_id: str
    answer: str


class Demographics(BaseModel):
    race: Race
    gender: Gender
    synthetic: bool = False


class Dossier(BaseModel):
    """An applicant's materials: resume text plus interview transcripts."""

    id: str
    resume: str
    transcripts: list[TranscriptTurn] = Field(default_factory=list)
    observed: Optional[Demographics] = None
    metadata: dict[str, str] = Field(default_factory=dict)

    @field_validator("resume")
    @classmethod
    def _resume_nonempty(cls, v: str) -> str:
        if not v.strip():
            raise ValueError("resume must be non-empty")
        return v

    @field_validator("transcripts")
    @classmethod
    def _answers_nonempty(cls, v: list[TranscriptTurn]) -> list[TranscriptTurn]:
        for turn in v:
            if not turn.answer.strip():
                raise ValueError(f"transcript answer for {turn.question_id!r} is empty")
        return v


class ManualSpan(BaseModel):
    """Hand annotation: byte span of the NFC source to replace with ``kind``."""

    field: str  # "resume" or "transcripts[<i>]"
    start: int
    end: int
    kind: PlaceholderKind


class RedactionRuleSet(BaseModel):
    """Per-dossier redaction configuration.

    ``names`` follows the corpus convention: the first entry is the
    canonical "First Last" form; its first/last tokens classify any
    single-token variants. ``college_names``/``college_locations`` are
    optional exact-phrase auto rules for corpora where those strings are
    known; otherwise colleges are annotated via ``manual_spans``.
    """

    names: list[str] = Field(default_factory=list)
    college_names: list[str] = Field(default_factory=list)
    college_locations: list[str] = Field(default_factory=list)
    manual_spans: list[ManualSpan] = Field(default_factory=list)
    deny_list_extra: list[str] = Field(default_factory=list)



class RedactionEntry(BaseModel):
    field: str
    start: int  # byte offset into the NFC UTF-8 source
    end: int
    kind: PlaceholderKind
    ordinal: int = 0  # 0 = bare [[KIND]]; n >= 1 = [[KIND:n]]
    original: str

    def placeholder(self) -> str:
        if self.ordinal:
            return f"[[{self.kind.value}:{self.ordinal}]]"
        return f"[[{self.kind.value}]]"


class RedactedDossier(BaseModel):
    source_id: str
    resume: str
    transcripts: list[TranscriptTurn] = Field(default_factory=list)
    redaction_log: list[RedactionEntry] = Field(default_factory=list)

    def field_text(self, field_name: str) -> str:
        if field_name == "resume":
            return self.resume
        idx = _transcript_index(field_name)
        return self.transcripts[idx].answer

    def field_names(self) -> list[str]:
        return ["resume"] + [f"transcripts[{i}]" for i in range(len(self.transcripts))]

    def entries_for(self, field_name: str) -> list[RedactionEntry]:
        return sorted(
            (e for e in self.redaction_log if e.field == field_name),
            key=lambda e: e.start,
        )

    def restore(self) -> dict[str, str]:
        """Reverse the redaction: map field name -> original NFC text."""
        out: dict[str, str] = {}
        for name in self.field_names():
            text = self.field_text(name)
            entries = self.entries_for(name)
            matches = list(PLACEHOLDER_RE.finditer(text))
            if len(matches) != len(entries):
                raise PlaceholderError(
                    f"{name}: {len(matches)} placeholders but {len(entries)} log entries",
                    code="PLACEHOLDER_LOG_MISMATCH",
                )
            pieces: list[str] = []
            pos = 0
            for match, entry in zip(matches, entries):
                pieces.append(text[pos : match.start()])
                pieces.append(entry.original)
                pos = match.end()
            pieces.append(text[pos:])
            out[name] = "".join(pieces)
        return out


class College(BaseModel):
    name: str
    city: str
    state: str


class SyntheticIdentity(BaseModel):
    """One realization of a demographic cell: name, title, pronouns, college."""

    race: Race
    gender: Gender
    first_name: str
    last_name: str
    title: str
    pronouns: tuple[str, str, str]  # (subject, object, possessive determiner)
    college: College

    @classmethod
    def build(
        cls,
        race: Race,
        gender: Gender,
        first_name: str,
        last_name: str,
        college: College,
    ) -> "SyntheticIdentity":
        if gender == Gender.FEMALE:
            title, pronouns = "Ms.", ("she", "her", "her")
        else:
            title, pronouns = "Mr.", ("he", "him", "his")
        return cls(
            race=race,
            gender=gender,
            first_name=first_name,
            last_name=last_name,
            title=title,
            pronouns=pronouns,
            college=college,
        )


# Default neutral substitutes for kinds that have no identity mapping.
DEFAULT_SUBSTITUTES: dict[PlaceholderKind, str] = {
    PlaceholderKind.SPOUSE: "spouse",
    PlaceholderKind.PARENT_ROLE: "parent",
    PlaceholderKind.RACE_REFERENCE: "my background",
    PlaceholderKind.JOB_LOCATION: "a local employer",
}


# ---------------------------------------------------------------------------
# Span helpers
# ---------------------------------------------------------------------------


def _nfc(text: str) -> str:
    return unicodedata.normalize("NFC", text)


def _byte_prefix(text: str) -> list[int]:
    """Prefix byte lengths: entry i = UTF-8 length of text[:i]."""
    return [0] + list(accumulate(len(ch.encode("utf-8")) for ch in text))


def _transcript_index(field_name: str) -> int:
    m = re.fullmatch(r"transcripts\[(\d+)\]", field_name)
    if not m:
        raise ValueError(f"bad field name {field_name!r}")
    return int(m.group(1))


def _next_word(text: str, pos: int) -> str | None:
    """The word immediately following pos, or None if punctuation/end first."""
    m = re.match(r"[ \t]+([A-Za-z']+)", text[pos:])
    return m.group(1).lower() if m else None


def _sentence_initial(prev_text: str) -> bool:
    if not prev_text or prev_text.endswith("\n"):
        return True
    return re.search(r"[.!?][\"')\]]*\s+$", prev_text) is not None


def _match_case(substitute: str, original: str) -> str:
    if original[:1].isupper() and substitute[:1].islower():
        return substitute[0].upper() + substitute[1:]
    return substitute


# ---------------------------------------------------------------------------
# redact
# ---------------------------------------------------------------------------


def _classify_names(names: list[str]) -> list[tuple[str, PlaceholderKind]]:
    """Order rules longest-first so 'Sarah Jones' wins over 'Sarah'."""
    canonical = names[0].split()
    if len(canonical) < 2:
        raise RedactionError(
            "first names entry must be the canonical 'First Last' form",
            code="EMPTY_RULESET",
        )
    first_token = canonical[0].casefold()
    last_token = canonical[-1].casefold()
    rules: list[tuple[str, PlaceholderKind]] = []
    for variant in names:
        tokens = variant.split()
        if len(tokens) >= 2:
            kind = PlaceholderKind.NAME_FULL
        elif tokens[0].casefold() == last_token:
            kind = PlaceholderKind.NAME_LAST
        elif tokens[0].casefold() == first_token:
            kind = PlaceholderKind.NAME_FIRST
        else:
            kind = PlaceholderKind.NAME_FIRST  # nicknames count as first names
        rules.append((variant, kind))
    rules.sort(key=lambda r: -len(r[0]))
    return rules


def _phrase_pattern(phrase: str) -> re.Pattern:
    """Word-boundary-anchored, case-insensitive exact-phrase matcher.

    Boundaries are applied only where the phrase starts/ends with a word
    character (so "Mr." still matches before a space).
    """
    parts = [re.escape(tok) for tok in phrase.split()]
    body = r"\s+".join(parts)
    prefix = r"\b" if re.match(r"\w", phrase) else ""
    suffix = r"\b" if re.search(r"\w$", phrase) else ""
    return re.compile(prefix + body + suffix, re.IGNORECASE)


# Titles are matched case-sensitively and only when a capitalized word
# follows: "Ms. Garcia" and "Miss Chen" match, the verb in "I will miss
# my students" does not.
_TITLE_RE = re.compile(r"\b(Mr|Mrs|Ms|Miss|Mx)\b\.?(?=\s+[A-Z\[])")


def _auto_matches(text: str, rules: RedactionRuleSet) -> list[tuple[int, int, PlaceholderKind]]:
    """Automatic rule matches as (start, end, kind) codepoint spans,
    in claim-priority order (names, colleges, titles, pronouns, kin)."""
    found: list[tuple[int, int, PlaceholderKind]] = []

    for phrase, kind in _classify_names(rules.names):
        for m in _phrase_pattern(phrase).finditer(text):
            found.append((m.start(), m.end(), kind))
    for phrase in sorted(rules.college_names, key=len, reverse=True):
        for m in _phrase_pattern(phrase).finditer(text):
            found.append((m.start(), m.end(), PlaceholderKind.COLLEGE))
    for phrase in sorted(rules.college_locations, key=len, reverse=True):
        for m in _phrase_pattern(phrase).finditer(text):
            found.append((m.start(), m.end(), PlaceholderKind.COLLEGE_LOCATION))

    for m in _TITLE_RE.finditer(text):
        found.append((m.start(), m.end(), PlaceholderKind.TITLE))

    for m in re.finditer(r"\b(she|he)\b", text, re.IGNORECASE):
        found.append((m.start(), m.end(), PlaceholderKind.PRONOUN_SUBJECT))
    for m in re.finditer(r"\bhim\b", text, re.IGNORECASE):
        found.append((m.start(), m.end(), PlaceholderKind.PRONOUN_OBJECT))
    for m in re.finditer(r"\b(his|hers)\b", text, re.IGNORECASE):
        found.append((m.start(), m.end(), PlaceholderKind.PRONOUN_POSSESSIVE))
    for m in re.finditer(r"\bher\b", text, re.IGNORECASE):
        nxt = _next_word(text, m.end())
        if nxt is not None and nxt not in _FUNCTION_WORDS:
            kind = PlaceholderKind.PRONOUN_POSSESSIVE
        else:
            kind = PlaceholderKind.PRONOUN_OBJECT
        found.append((m.start(), m.end(), kind))

    for m in re.finditer(r"\b(" + "|".join(SPOUSE_WORDS) + r")\b", text, re.IGNORECASE):
        found.append((m.start(), m.end(), PlaceholderKind.SPOUSE))
    for m in re.finditer(r"\b(" + "|".join(PARENT_WORDS) + r")\b", text, re.IGNORECASE):
        found.append((m.start(), m.end(), PlaceholderKind.PARENT_ROLE))
    return found


def redact(dossier: Dossier, rules: RedactionRuleSet) -> RedactedDossier:
    """Replace demographic signals with placeholders, keeping a reversible log.

    Manual spans win over automatic matches; overlapping manual spans raise
    OVERLAPPING_SPANS; an empty name list raises EMPTY_RULESET. Any deny-list
    term surviving outside a placeholder raises REDACTION_LEAK.
    """
    if not rules.names:
        raise RedactionError("no name variants supplied", code="EMPTY_RULESET")

    fields: dict[str, str] = {"resume": _nfc(dossier.resume)}
    for i, turn in enumerate(dossier.transcripts):
        fields[f"transcripts[{i}]"] = _nfc(turn.answer)

    prefix_of = {name: _byte_prefix(text) for name, text in fields.items()}

    manual_by_field: dict[str, list[tuple[int, int, PlaceholderKind]]] = {
        name: [] for name in fields
    }
    for span in rules.manual_spans:
        if span.field not in fields:
            raise RedactionError(
                f"manual span names unknown field {span.field!r}",
                code="OVERLAPPING_SPANS",
            )
        prefix = prefix_of[span.field]
        try:
            start_cp = prefix.index(span.start)
            end_cp = prefix.index(span.end)
        except ValueError as exc:
            raise RedactionError(
                f"manual span {span.start}:{span.end} in {span.field} does not "
                "fall on codepoint boundaries of the NFC source",
                code="OVERLAPPING_SPANS",
            ) from exc
        if end_cp <= start_cp:
            raise RedactionError(
                f"manual span {span.start}:{span.end} in {span.field} is empty",
                code="OVERLAPPING_SPANS",
            )
        manual_by_field[span.field].append((start_cp, end_cp, span.kind))

    redacted_fields: dict[str, str] = {}
    log: list[RedactionEntry] = []
    distinct_originals: dict[PlaceholderKind, list[str]] = {}
    field_spans: dict[str, list[tuple[int, int, PlaceholderKind]]] = {}

    for name, text in fields.items():
        manual = sorted(manual_by_field[name])
        for (s1, e1, _), (s2, e2, _) in zip(manual, manual[1:]):
            if s2 < e1:
                raise RedactionError(
                    f"manual spans overlap in {name}: [{s1},{e1}) and [{s2},{e2})",
                    code="OVERLAPPING_SPANS",
                )
        claimed: list[tuple[int, int, PlaceholderKind]] = list(manual)

        def overlaps(s: int, e: int) -> bool:
            return any(s < e0 and s0 < e for s0, e0, _ in claimed)

        for s, e, kind in _auto_matches(text, rules):
            if not overlaps(s, e):
                claimed.append((s, e, kind))
        field_spans[name] = sorted(claimed)

    # Ordinals: a kind whose occurrences cover >1 distinct original string
    # gets 1-based ordinals keyed by first appearance of each original.
    for name in fields:
        for s, e, kind in field_spans[name]:
            original = fields[name][s:e]
            key = original.casefold()
            existing = distinct_originals.setdefault(kind, [])
            if key not in existing:
                existing.append(key)
    needs_ordinal = {k for k, v in distinct_originals.items() if len(v) > 1}

    for name, text in fields.items():
        prefix = prefix_of[name]
        pieces: list[str] = []
        pos = 0
        for s, e, kind in field_spans[name]:
            original = text[s:e]
            ordinal = 0
            if kind in needs_ordinal:
                ordinal = distinct_originals[kind].index(original.casefold()) + 1
            entry = RedactionEntry(
                field=name,
                start=prefix[s],
                end=prefix[e],
                kind=kind,
                ordinal=ordinal,
                original=original,
            )
            log.append(entry)
            pieces.append(text[pos:s])
            pieces.append(entry.placeholder())
            pos = e
        pieces.append(text[pos:])
        redacted_fields[name] = "".join(pieces)

    result = RedactedDossier(
        source_id=dossier.id,
        resume=redacted_fields["resume"],
        transcripts=[
            TranscriptTurn(question_id=t.question_id, answer=redacted_fields[f"transcripts[{i}]"])
            for i, t in enumerate(dossier.transcripts)
        ],
        redaction_log=sorted(log, key=_log_sort_key),
    )

    leaks = scan_deny_list(result, rules.names, rules.deny_list_extra)
    if leaks:
        raise RedactionError(
            f"deny-list terms survived redaction: {sorted(set(l[1] for l in leaks))}",
            code="REDACTION_LEAK",
            leaks=leaks,
        )
    return result


def _log_sort_key(entry: RedactionEntry) -> tuple:
    if entry.field == "resume":
        return (0, 0, entry.start)
    return (1, _transcript_index(entry.field), entry.start)


_GENDERED_PRONOUN_RE = re.compile(r"\b(she|he|him|her|hers|his)\b", re.IGNORECASE)


def scan_deny_list(
    target: RedactedDossier | Dossier,
    names: list[str] = (),
    extra_terms: list[str] = (),
) -> list[tuple[str, str]]:
    """(field, matched term) hits outside placeholders.

    Scans for the given name/extra phrases, gendered titles (using the
    same followed-by-capital rule as redaction), and gendered third-person
    pronouns.
    """
    if isinstance(target, RedactedDossier):
        fields = {name: target.field_text(name) for name in target.field_names()}
    else:
        fields = {"resume": target.resume}
        for i, t in enumerate(target.transcripts):
            fields[f"transcripts[{i}]"] = t.answer
    hits: list[tuple[str, str]] = []
    for name, text in fields.items():
        stripped = PLACEHOLDER_RE.sub(" ", text)
        for term in list(names) + list(extra_terms):
            if term.strip() and _phrase_pattern(term).search(stripped):
                hits.append((name, term))
        for m in _TITLE_RE.finditer(stripped):
            hits.append((name, m.group(0)))
        for m in _GENDERED_PRONOUN_RE.finditer(stripped):
            hits.append((name, m.group(0)))
    return hits


# ---------------------------------------------------------------------------
# instantiate / blind
# ---------------------------------------------------------------------------


def _substitute_fields(
    redacted: RedactedDossier,
    resolve: Callable[[RedactionEntry, str], str | None],
) -> dict[str, str]:
    """Replace each placeholder via ``resolve(entry, output_so_far)``.

    Returning None drops the placeholder plus one adjacent space.
    """
    out: dict[str, str] = {}
    for name in redacted.field_names():
        text = redacted.field_text(name)
        entries = redacted.entries_for(name)
        matches = list(PLACEHOLDER_RE.finditer(text))
        if len(matches) != len(entries):
            raise PlaceholderError(
                f"{name}: {len(matches)} placeholders but {len(entries)} log entries",
                code="PLACEHOLDER_LOG_MISMATCH",
            )
        built: list[str] = []
        pos = 0
        for match, entry in zip(matches, entries):
            if (match.group(1), match.group(2) or 0) != (
                entry.kind.value,
                str(entry.ordinal) if entry.ordinal else 0,
            ):
                raise PlaceholderError(
                    f"{name}: placeholder {match.group(0)} does not match log entry "
                    f"{entry.placeholder()}",
                    code="PLACEHOLDER_LOG_MISMATCH",
                )
            built.append(text[pos : match.start()])
            prev = "".join(built)
            value = resolve(entry, prev)
            pos = match.end()
            if value is None:
                # Drop, consuming one following space (or a trailing one).
                if pos < len(text) and text[pos] == " ":
                    pos += 1
                elif built and built[-1].endswith(" "):
                    built[-1] = built[-1][:-1]
            else:
                built.append(value)
        built.append(text[pos:])
        result = "".join(built)
        if "[[" in result:
            raise PlaceholderError(
                f"{name}: unresolved placeholder sequence remains",
                code="PLACEHOLDER_LEAK",
            )
        out[name] = result
    return out


def instantiate(
    redacted: RedactedDossier,
    identity: SyntheticIdentity,
    substitutes: dict[PlaceholderKind, str] | None = None,
) -> Dossier:
    """Fill placeholders from a synthetic identity.

    Pronoun substitutions reapply the casing recorded in the log; kinds
    without an identity value use the neutral-substitute table; DISTRICT_*
    restores the original text (districts carry no demographic signal).
    """
    subs = dict(DEFAULT_SUBSTITUTES)
    if substitutes is not None:
        subs = substitutes
    female = identity.gender == Gender.FEMALE
    subject, obj, poss_det = identity.pronouns
    poss_indep = "hers" if female else "his"

    def resolve(entry: RedactionEntry, prev: str) -> str | None:
        kind = entry.kind
        if kind == PlaceholderKind.NAME_FULL:
            return f"{identity.first_name} {identity.last_name}"
        if kind == PlaceholderKind.NAME_FIRST:
            return identity.first_name
        if kind == PlaceholderKind.NAME_LAST:
            return identity.last_name
        if kind == PlaceholderKind.TITLE:
            return identity.title
        if kind == PlaceholderKind.PRONOUN_SUBJECT:
            return _match_case(subject, entry.original)
        if kind == PlaceholderKind.PRONOUN_OBJECT:
            return _match_case(obj, entry.original)
        if kind == PlaceholderKind.PRONOUN_POSSESSIVE:
            # "hers" was independent; "her" was a determiner; "his" serves
            # both roles, so map it to the (far more common) determiner.
            form = poss_indep if entry.original.casefold() == "hers" else poss_det
            return _match_case(form, entry.original)
        if kind == PlaceholderKind.COLLEGE:
            return identity.college.name
        if kind == PlaceholderKind.COLLEGE_LOCATION:
            return f"{identity.college.city}, {identity.college.state}"
        if kind in (
            PlaceholderKind.DISTRICT_NAME,
            PlaceholderKind.DISTRICT_CITY,
            PlaceholderKind.DISTRICT_STATE,
        ):
            return entry.original
        if kind in subs:
            return subs[kind]
        raise PlaceholderError(
            f"no mapping for placeholder kind {kind.value}",
            code="UNRESOLVED_PLACEHOLDER",
            kind=kind.value,
        )

    fields = _substitute_fields(redacted, resolve)
    return Dossier(
        id=f"{redacted.source_id}::{identity.race.value}-{identity.gender.value}",
        resume=fields["resume"],
        transcripts=[
            TranscriptTurn(question_id=t.question_id, answer=fields[f"transcripts[{i}]"])
            for i, t in enumerate(redacted.transcripts)
        ],
        observed=Demographics(race=identity.race, gender=identity.gender, synthetic=True),
        metadata={"source_id": redacted.source_id},
    )


def blind(
    redacted: RedactedDossier,
    substitutes: dict[PlaceholderKind, str] | None = None,
) -> Dossier:
    """Fill placeholders with neutral forms: names -> "the applicant",
    pronouns -> they/them/their, titles dropped, colleges -> "their college".

    Capitalization follows sentence position in the output.
    """
    subs = dict(DEFAULT_SUBSTITUTES)
    if substitutes is not None:
        subs = substitutes

    def resolve(entry: RedactionEntry, prev: str) -> str | None:
        kind = entry.kind
        initial = _sentence_initial(prev)

        def cased(s: str) -> str:
            return s[0].upper() + s[1:] if initial else s

        if kind in (
            PlaceholderKind.NAME_FULL,
            PlaceholderKind.NAME_FIRST,
            PlaceholderKind.NAME_LAST,
        ):
            return cased("the applicant")
        if kind == PlaceholderKind.TITLE:
            return None
        if kind == PlaceholderKind.PRONOUN_SUBJECT:
            return cased("they")
        if kind == PlaceholderKind.PRONOUN_OBJECT:
            return cased("them")
        if kind == PlaceholderKind.PRONOUN_POSSESSIVE:
            indep = entry.original.casefold() == "hers"
            return cased("theirs" if indep else "their")
        if kind == PlaceholderKind.COLLEGE:
            return cased("their college")
        if kind == PlaceholderKind.COLLEGE_LOCATION:
            return cased("the area")
        if kind in (
            PlaceholderKind.DISTRICT_NAME,
            PlaceholderKind.DISTRICT_CITY,
            PlaceholderKind.DISTRICT_STATE,
        ):
            return entry.original
        if kind in subs:
            return cased(subs[kind])
        raise PlaceholderError(
            f"no mapping for placeholder kind {kind.value}",
            code="UNRESOLVED_PLACEHOLDER",
            kind=kind.value,
        )

    fields = _substitute_fields(redacted, resolve)
    return Dossier(
        id=f"{redacted.source_id}::blinded",
        resume=fields["resume"],
        transcripts=[
            TranscriptTurn(question_id=t.question_id, answer=fields[f"transcripts[{i}]"])
            for i, t in enumerate(redacted.transcripts)
        ],
        metadata={"source_id": redacted.source_id, "blinded": "true"},
    )


# ---------------------------------------------------------------------------
# District substitution (the "Other District" condition)
# ---------------------------------------------------------------------------


def substitute_district(
    text: str,
    from_names: list[str],
    to: tuple[str, str, str],
    from_city: str | None = None,
    from_state: str | None = None,
) -> tuple[str, int]:
    """Replace district-name variants (and optionally city/state) in text.

    Returns (new_text, replacement_count). ``to`` is (district, city, state).
    """
    to_district, to_city, to_state = to
    count = 0

    def sub_all(t: str, phrase: str, replacement: str) -> str:
        nonlocal count
        t, n = _phrase_pattern(phrase).subn(replacement, t)
        count += n
        return t

    for phrase in sorted(from_names, key=len, reverse=True):
        text = sub_all(text, phrase, to_district)
    if from_city:
        text = sub_all(text, from_city, to_city)
    if from_state:
        text = sub_all(text, from_state, to_state)
    return text, count
