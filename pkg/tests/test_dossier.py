import re
import unicodedata

import pytest

from screenaudit.dossier import (
    College,
    Dossier,
    Gender,
    ManualSpan,
    PLACEHOLDER_RE,
    PlaceholderKind,
    Race,
    RedactionRuleSet,
    SyntheticIdentity,
    TranscriptTurn,
    blind,
    instantiate,
    redact,
    scan_deny_list,
    substitute_district,
)
from screenaudit.errors import PlaceholderError, RedactionError

IDENT_F = SyntheticIdentity.build(
    race=Race.BLACK,
    gender=Gender.FEMALE,
    first_name="Lakisha",
    last_name="Washington",
    college=College(name="The University of Houston", city="Houston", state="Texas"),
)
IDENT_M = SyntheticIdentity.build(
    race=Race.WHITE,
    gender=Gender.MALE,
    first_name="Jake",
    last_name="Yoder",
    college=College(name="The University of North Texas", city="Denton", state="Texas"),
)


def simple_dossier(resume, answer="I enjoy teaching."):
    return Dossier(
        id="t1",
        resume=resume,
        transcripts=[TranscriptTurn(question_id="q1", answer=answer)],
    )


# --- redact -----------------------------------------------------------------


def test_redact_title_name_pronoun():
    d = simple_dossier("Ms. Jones said she loves teaching.")
    r = redact(d, RedactionRuleSet(names=["Sarah Jones", "Sarah", "Jones"]))
    assert r.resume == "[[TITLE]] [[NAME_LAST]] said [[PRONOUN_SUBJECT]] loves teaching."


def test_redact_identity_when_no_matches():
    d = simple_dossier("Dedicated teacher with strong results.", "Students come first.")
    r = redact(d, RedactionRuleSet(names=["Pat Quillfeather"]))
    assert r.resume == d.resume
    assert r.transcripts[0].answer == d.transcripts[0].answer
    assert r.redaction_log == []


def naive_scan_replace(text, replacements):
    """Oracle: independent single-pass scan-and-replace, longest match first
    at each position, case-insensitive with word boundaries."""
    out = []
    i = 0
    while i < len(text):
        hit = None
        for phrase, token in sorted(replacements, key=lambda p: -len(p[0])):
            take = text[i : i + len(phrase)]
            if take.lower() != phrase.lower():
                continue
            before_ok = i == 0 or not (text[i - 1].isalnum() or text[i - 1] == "_")
            j = i + len(phrase)
            after_ok = (
                j >= len(text)
                or not (text[j].isalnum() or text[j] == "_")
                or not phrase[-1].isalnum()
            )
            if before_ok and after_ok:
                hit = (phrase, token)
                break
        if hit:
            out.append(hit[1])
            i += len(hit[0])
        else:
            out.append(text[i])
            i += 1
    return "".join(out)


def test_redact_three_sentence_fixture_matches_naive_oracle():
    text = (
        "Dana Whitfield teaches algebra. She schedules her own tutorials. "
        "Dana studied at Oberlin College."
    )
    d = simple_dossier(text)
    start = text.find("Oberlin College")
    rules = RedactionRuleSet(
        names=["Dana Whitfield", "Dana", "Whitfield"],
        manual_spans=[
            ManualSpan(
                field="resume",
                start=len(text[:start].encode()),
                end=len(text[: start + len("Oberlin College")].encode()),
                kind=PlaceholderKind.COLLEGE,
            )
        ],
        deny_list_extra=["Oberlin"],
    )
    r = redact(d, rules)
    expected = naive_scan_replace(
        text,
        [
            ("Dana Whitfield", "[[NAME_FULL]]"),
            ("Dana", "[[NAME_FIRST]]"),
            ("Oberlin College", "[[COLLEGE]]"),
            ("She", "[[PRONOUN_SUBJECT]]"),
            ("her", "[[PRONOUN_POSSESSIVE]]"),
        ],
    )
    assert r.resume == expected


def test_redact_word_boundaries_protect_herbert():
    # "Herbert" contains "her" but must be matched as a name, never by the
    # pronoun rule; "sherpa" must survive untouched.
    d = simple_dossier("Herbert admires the sherpa and trusts her.")
    r = redact(d, RedactionRuleSet(names=["Herbert Lin", "Herbert", "Lin"]))
    assert r.resume == "[[NAME_FIRST]] admires the sherpa and trusts [[PRONOUN_OBJECT]]."


def test_redact_requires_names():
    with pytest.raises(RedactionError) as exc:
        redact(simple_dossier("text here"), RedactionRuleSet(names=[]))
    assert exc.value.code == "EMPTY_RULESET"


def test_redact_overlapping_manual_spans_rejected():
    d = simple_dossier("Studied at Spelman College in Atlanta years ago.")
    spans = [
        ManualSpan(field="resume", start=11, end=26, kind=PlaceholderKind.COLLEGE),
        ManualSpan(field="resume", start=19, end=30, kind=PlaceholderKind.COLLEGE_LOCATION),
    ]
    with pytest.raises(RedactionError) as exc:
        redact(d, RedactionRuleSet(names=["Ann Ray"], manual_spans=spans))
    assert exc.value.code == "OVERLAPPING_SPANS"


def test_redact_manual_span_beats_auto_match():
    text = "Contact Dana Whitfield about the mural."
    start = text.find("Dana Whitfield about")
    d = simple_dossier(text)
    rules = RedactionRuleSet(
        names=["Dana Whitfield", "Dana", "Whitfield"],
        manual_spans=[
            ManualSpan(
                field="resume",
                start=start,
                end=start + len("Dana Whitfield about the mural"),
                kind=PlaceholderKind.RACE_REFERENCE,
            )
        ],
    )
    r = redact(d, rules)
    assert r.resume == "Contact [[RACE_REFERENCE]]."


def test_redact_leak_detection():
    # "Quill" configured as deny-list extra but nothing redacts it.
    d = simple_dossier("The Quill award went to Pat Monroe.")
    with pytest.raises(RedactionError) as exc:
        redact(d, RedactionRuleSet(names=["Pat Monroe"], deny_list_extra=["Quill"]))
    assert exc.value.code == "REDACTION_LEAK"


# --- reversibility ----------------------------------------------------------


def test_roundtrip_byte_exact_on_fixture_corpus(fixture_corpus):
    for dossier, rules in fixture_corpus:
        r = redact(dossier, rules)
        restored = r.restore()
        assert restored["resume"].encode() == unicodedata.normalize(
            "NFC", dossier.resume
        ).encode()
        for i, turn in enumerate(dossier.transcripts):
            assert restored[f"transcripts[{i}]"].encode() == unicodedata.normalize(
                "NFC", turn.answer
            ).encode()


def test_byte_offsets_with_non_ascii():
    d = simple_dossier("Renée Fontaine leads. She is here.")
    r = redact(d, RedactionRuleSet(names=["Renée Fontaine", "Renée", "Fontaine"]))
    entry = r.redaction_log[0]
    assert entry.original == "Renée Fontaine"
    assert entry.start == 0
    assert entry.end == len("Renée Fontaine".encode())  # é is 2 bytes
    assert r.restore()["resume"] == unicodedata.normalize("NFC", d.resume)


def test_redact_deterministic(fixture_corpus):
    dossier, rules = fixture_corpus[0]
    a = redact(dossier, rules)
    b = redact(dossier, rules)
    assert a.model_dump() == b.model_dump()


# --- instantiate ------------------------------------------------------------


def test_instantiate_direct_substitution():
    d = simple_dossier("Ms. Jones said she is ready.")
    r = redact(d, RedactionRuleSet(names=["Sarah Jones", "Sarah", "Jones"]))
    out = instantiate(r, IDENT_F)
    assert out.resume == "Ms. Washington said she is ready."
    male = instantiate(r, IDENT_M)
    assert male.resume == "Mr. Yoder said he is ready."


def test_instantiate_deterministic():
    d = simple_dossier("Ms. Jones said she is ready.")
    r = redact(d, RedactionRuleSet(names=["Sara Jones", "Sara", "Jones"]))
    assert instantiate(r, IDENT_F).model_dump() == instantiate(r, IDENT_F).model_dump()


def test_instantiate_sets_synthetic_demographics():
    d = simple_dossier("Jones teaches math.")
    r = redact(d, RedactionRuleSet(names=["Sara Jones", "Sara", "Jones"]))
    out = instantiate(r, IDENT_F)
    assert out.observed is not None
    assert out.observed.race == Race.BLACK
    assert out.observed.gender == Gender.FEMALE
    assert out.observed.synthetic is True


def test_instantiate_no_placeholders_left(fixture_corpus):
    for dossier, rules in fixture_corpus:
        out = instantiate(redact(dossier, rules), IDENT_M)
        assert "[[" not in out.resume
        assert all("[[" not in t.answer for t in out.transcripts)


def test_instantiate_pronoun_case_from_log():
    d = simple_dossier("She teaches. Her students thrive. People trust her.")
    r = redact(d, RedactionRuleSet(names=["Ann Smith", "Ann", "Smith"]))
    out = instantiate(r, IDENT_M)
    assert out.resume == "He teaches. His students thrive. People trust him."


def test_instantiate_unresolved_placeholder():
    d = simple_dossier("Her husband moved too.")
    r = redact(d, RedactionRuleSet(names=["Ann Smith", "Ann", "Smith"]))
    with pytest.raises(PlaceholderError) as exc:
        instantiate(r, IDENT_F, substitutes={})  # SPOUSE mapping removed
    assert exc.value.code == "UNRESOLVED_PLACEHOLDER"


def test_roundtrip_through_identity(fixture_corpus):
    """redact(instantiate(r, id)) recovers the placeholder skeleton."""
    dossier, rules = fixture_corpus[0]
    r = redact(dossier, rules)
    synth = instantiate(r, IDENT_F)
    rules_from_identity = RedactionRuleSet(
        names=[
            f"{IDENT_F.first_name} {IDENT_F.last_name}",
            IDENT_F.first_name,
            IDENT_F.last_name,
        ],
        college_names=[IDENT_F.college.name],
        college_locations=[f"{IDENT_F.college.city}, {IDENT_F.college.state}"],
        # kin/race-reference text was replaced with neutral words at
        # instantiation; mark them so the скeleton matches exactly.
        manual_spans=_neutral_spans(synth),
    )
    r2 = redact(synth, rules_from_identity)
    assert _skeleton(r2.resume) == _skeleton(r.resume)
    for t2, t1 in zip(r2.transcripts, r.transcripts):
        assert _skeleton(t2.answer) == _skeleton(t1.answer)


def _skeleton(text):
    """Normalize ordinals away: the skeleton is the kind sequence + text."""
    return PLACEHOLDER_RE.sub(lambda m: f"[[{m.group(1)}]]", text)


def _neutral_spans(dossier):
    spans = []
    for field_name, text in [("resume", dossier.resume)] + [
        (f"transcripts[{i}]", t.answer) for i, t in enumerate(dossier.transcripts)
    ]:
        norm = unicodedata.normalize("NFC", text)
        for phrase, kind in [
            ("spouse", PlaceholderKind.SPOUSE),
            ("parent", PlaceholderKind.PARENT_ROLE),
            ("my background", PlaceholderKind.RACE_REFERENCE),
            ("a local employer", PlaceholderKind.JOB_LOCATION),
        ]:
            for m in re.finditer(re.escape(phrase), norm):
                start = len(norm[: m.start()].encode())
                spans.append(
                    ManualSpan(
                        field=field_name,
                        start=start,
                        end=start + len(phrase.encode()),
                        kind=kind,
                    )
                )
    return spans


# --- blind ------------------------------------------------------------------


def test_blind_direct_mapping():
    d = simple_dossier("Jones enjoys math.")
    r = redact(d, RedactionRuleSet(names=["Pat Jones", "Pat", "Jones"]))
    assert blind(r).resume == "The applicant enjoys math."


def test_blind_neutral_forms_and_title_drop():
    d = simple_dossier("Ms. Jones said she loves her students.")
    r = redact(d, RedactionRuleSet(names=["Sarah Jones", "Sarah", "Jones"]))
    out = blind(r)
    assert out.resume == "The applicant said they love their students.".replace(
        "they love", "they loves"
    )  # verb agreement left untouched by design


def test_blind_no_placeholders_no_denylist_hits(fixture_corpus, catalog):
    catalog_names = list(catalog.all_names())
    for dossier, rules in fixture_corpus:
        out = blind(redact(dossier, rules))
        assert "[[" not in out.resume
        hits = scan_deny_list(out, names=rules.names + catalog_names,
                              extra_terms=rules.deny_list_extra)
        assert hits == []


def test_blind_idempotent_through_redact_cycle():
    d = simple_dossier("Ms. Jones said she loves her students and her husband.")
    r = redact(d, RedactionRuleSet(names=["Sarah Jones", "Sarah", "Jones"]))
    once = blind(r)
    # Blinded text has no demographic signals left, so another redaction
    # pass finds nothing and blinding changes nothing.
    r2 = redact(
        Dossier(id="b", resume=once.resume, transcripts=once.transcripts),
        RedactionRuleSet(names=["Sarah Jones", "Sarah", "Jones"]),
    )
    assert r2.redaction_log == []
    assert blind(r2).resume == once.resume


# --- substitute_district ----------------------------------------------------


def test_substitute_district_no_mention():
    text, count = substitute_district(
        "I love teaching.", ["Lone Star USD"], ("Mercer County Schools", "Princeton", "West Virginia")
    )
    assert (text, count) == ("I love teaching.", 0)


def test_substitute_district_single():
    text, count = substitute_district(
        "I taught in Lone Star USD for years",
        ["Lone Star USD"],
        ("Mercer County Schools", "Princeton", "West Virginia"),
    )
    assert text == "I taught in Mercer County Schools for years"
    assert count == 1


def test_substitute_district_variants_and_city_state():
    text = (
        "Lone Star Unified School District hired me. Lone Star Unified is large; "
        "LSUSD serves Houston, Texas families."
    )
    out, count = substitute_district(
        text,
        ["Lone Star Unified School District", "Lone Star Unified", "LSUSD"],
        ("Mercer County Schools", "Princeton", "West Virginia"),
        from_city="Houston",
        from_state="Texas",
    )
    assert count == 5
    for needle in ["Lone Star", "LSUSD", "Houston", "Texas"]:
        assert needle not in out
    assert "Mercer County Schools hired me" in out
    assert "Princeton, West Virginia families" in out
