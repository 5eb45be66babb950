import json

import numpy as np
import pytest

from conftest import PHISH_BITS
from src.email_parser import parse_email
from src.exceptions import ConfigError, PdenffError
from src.features import (
    GROUP_ORDER,
    PREDICATES,
    FeatureGroup,
    FeatureRegistry,
    LongVector,
    ShortVector,
    VectorMode,
    extract_long,
    reduce_short,
    registered_domain,
    vectorize,
)


def test_default_registry_layout(registry):
    assert len(registry.entries) == 21
    assert [e.index for e in registry.entries] == list(range(21))
    assert registry.group_sizes() == {
        FeatureGroup.SPAM: 3,
        FeatureGroup.BODY: 5,
        FeatureGroup.URL: 8,
        FeatureGroup.HEADER: 5,
    }
    assert GROUP_ORDER == (FeatureGroup.SPAM, FeatureGroup.BODY, FeatureGroup.URL, FeatureGroup.HEADER)


def test_phish_fixture_bits(phish_eml, registry):
    long_vector = extract_long(parse_email(phish_eml), registry)
    assert set(long_vector.active_ids(registry)) == PHISH_BITS


def test_phish_fixture_short_vector(phish_eml, registry):
    short = reduce_short(extract_long(parse_email(phish_eml), registry), registry)
    assert short == ShortVector(spam_score=0.0, body_score=0.4, url_score=0.25, header_score=0.2)


def test_plain_mail_is_quiet(ham_eml, registry):
    long_vector = extract_long(parse_email(ham_eml), registry)
    assert sum(long_vector.bits) <= 1


def test_empty_message_has_no_features(registry):
    assert not any(extract_long(parse_email(b""), registry).bits)


def test_vectorize_modes(phish_eml, registry):
    email = parse_email(phish_eml)
    long_x = vectorize(email, registry, VectorMode.LONG)
    short_x = vectorize(email, registry, VectorMode.SHORT)
    assert long_x.shape == (21,)
    assert set(np.unique(long_x)) <= {0.0, 1.0}
    assert short_x.shape == (4,)
    assert np.all((short_x >= 0) & (short_x <= 1))


def test_reduce_short_is_group_mean(registry, rng):
    bits = rng.random(21) < 0.5
    short = reduce_short(LongVector(tuple(bool(b) for b in bits)), registry).as_array()
    for k, group in enumerate(GROUP_ORDER):
        assert short[k] == pytest.approx(bits[list(registry.group_indices(group))].mean())


@pytest.mark.parametrize(
    "headers, feature",
    [
        (b"From: a@bank.example.com\nReply-To: b@evil.example.net\n", "header_from_reply_to_mismatch"),
        (b"From: a@bank.example.com\nMessage-ID: <1@bulk.example.net>\n", "header_message_id_domain_mismatch"),
        (b"From: a@example.org\nSubject: RE: your invoice\n", "header_fake_reply"),
        (b"From: a@example.org\nTo: undisclosed-recipients:;\n", "header_undisclosed_recipients"),
        (b"From: a@example.org\nSubject: YOU HAVE WON\n", "spam_all_caps_subject"),
    ],
)
def test_header_predicates(headers, feature, registry):
    long_vector = extract_long(parse_email(headers + b"\nhello\n"), registry)
    assert feature in long_vector.active_ids(registry)


def test_same_registered_domain_is_no_mismatch(registry):
    raw = b"From: a@mail.example.co.uk\nMessage-ID: <1@smtp.example.co.uk>\n\nhi\n"
    assert "header_message_id_domain_mismatch" not in extract_long(parse_email(raw), registry).active_ids(registry)


def test_body_and_url_predicates(registry):
    raw = (
        b"From: a@example.org\nContent-Type: text/html\n\n"
        b"<p>Dear customer, act now!!!</p>"
        b'<a href="http://evil.example.net/">www.paypal.com</a>'
        b'<a href="http://a.b.c.d.example.net:8080/x%20y">details</a>'
        b'<img src="https://tracker.example.net/p.gif"><script>1</script>'
    )
    active = set(extract_long(parse_email(raw), registry).active_ids(registry))
    assert {
        "body_generic_greeting",
        "spam_urgency",
        "url_anchor_domain_mismatch",
        "url_many_dots",
        "url_nonstandard_port",
        "url_hex_escape",
        "body_external_images",
        "body_has_script",
        "body_html_part",
    } <= active
    assert "url_ip_host" not in active


def test_failing_predicate_is_inactive(monkeypatch, phish_eml, registry):
    def broken(email, facts, params):
        raise RuntimeError("boom")

    monkeypatch.setitem(PREDICATES, "url_ip_host", broken)
    active = extract_long(parse_email(phish_eml), registry).active_ids(registry)
    assert "url_ip_host" not in active
    assert "body_has_form" in active


@pytest.mark.parametrize(
    "host, expected",
    [
        ("login.paypal.com.evil.co.uk", "evil.co.uk"),
        ("WWW.Example.ORG.", "example.org"),
        ("10.0.0.1", "10.0.0.1"),
        (None, None),
    ],
)
def test_registered_domain(host, expected):
    assert registered_domain(host) == expected


def test_registry_round_trip(registry):
    reloaded = FeatureRegistry.from_document(json.loads(registry.dump()))
    assert [e.id for e in reloaded.entries] == [e.id for e in registry.entries]
    assert reloaded.entries[2].parameters == registry.entries[2].parameters


def test_registry_rejects_unknown_feature(registry):
    document = registry.to_document()
    document["features"][0]["id"] = "header_made_up"
    with pytest.raises(ConfigError):
        FeatureRegistry.from_document(document)


def test_registry_rejects_wrong_size(registry):
    document = registry.to_document()
    document["features"] = document["features"][:20]
    with pytest.raises(PdenffError):
        FeatureRegistry.from_document(document)


def test_registry_load_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        FeatureRegistry.load(tmp_path / "missing.json")


def test_short_vector_range():
    with pytest.raises(ValueError):
        ShortVector(1.5, 0.0, 0.0, 0.0)
