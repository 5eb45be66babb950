"""
Shared fixtures: hand-built e-mails, rule bases and a trained profile store.
"""

import numpy as np
import pytest

from ingest.synthetic_corpus import SyntheticCorpus
from src.ecm import Cluster, EcmParams, EvolvingClusterer
from src.features import FeatureRegistry
from src.fuzzy_inference import InferenceParams, RuleBase
from src.fuzzy_rule import FuzzyRule, RuleOrigin
from src.profile_store import ProfileStore
from src.refinement import bootstrap_rulebase

PHISH_EML = b"""From: PayPal Service <service@paypal-support.example.com>
To: victim@example.org
Subject: Please verify your account
Message-ID: <abc123@paypal-support.example.com>
MIME-Version: 1.0
Content-Type: text/html; charset="utf-8"

<html><body><p>Your account needs attention.</p>
<p><a href="http://1.2.3.4/login">click here</a></p>
<form action="http://1.2.3.4/collect" method="post"><input type="password" name="pw"></form>
</body></html>
"""

HAM_EML = b"""From: Alice <alice@example.org>
To: Bob <bob@example.org>
Subject: Lunch on Friday?
Message-ID: <lunch-42@example.org>
Date: Fri, 05 Jun 2026 10:00:00 +0000
Content-Type: text/plain; charset="utf-8"

Hi Bob,

are we still on for lunch on Friday? The new place is at https://www.example.org/menu.

Alice
"""

# Hand-evaluated features of PHISH_EML. Besides the urgent subject, the IP
# host, the "click here" anchor and the form, the message is text/html, so
# body_html_part fires as well.
PHISH_BITS = {
    "header_urgent_subject",
    "url_ip_host",
    "url_click_here_anchor",
    "body_html_part",
    "body_has_form",
}


@pytest.fixture(name="phish_eml")
def fixture_phish_eml():
    return PHISH_EML


@pytest.fixture(name="ham_eml")
def fixture_ham_eml():
    return HAM_EML


@pytest.fixture(name="registry")
def fixture_registry():
    return FeatureRegistry.default()


@pytest.fixture(name="rng")
def fixture_rng():
    return np.random.default_rng(20260605)


@pytest.fixture(name="make_rulebase")
def fixture_make_rulebase():
    """Build a rule base whose rules sit on clusters of the same centers"""

    def make(centers, widths, consequents, radii=None, m_active=3, profile_version=1,
             origin=RuleOrigin.OFFLINE_ENHANCED, dthr=0.18, **inference):
        centers = np.atleast_2d(np.asarray(centers, dtype=float))
        n, dim = centers.shape
        widths = np.broadcast_to(np.asarray(widths, dtype=float), (n, dim))
        consequents = np.atleast_2d(np.asarray(consequents, dtype=float))
        radii = np.zeros(n) if radii is None else np.asarray(radii, dtype=float)
        ecm = EcmParams(dthr=dthr)
        params = InferenceParams(m_active=m_active, **inference)
        clusters = [
            Cluster(cluster_id=k, center=centers[k], radius=float(radii[k]), member_count=1, created_at=0)
            for k in range(n)
        ]
        rules = tuple(
            FuzzyRule(
                rule_id=k,
                cluster_id=k,
                centers=centers[k],
                widths=widths[k],
                consequent=consequents[k],
                covariance=np.eye(dim + 1) * params.initial_covariance,
                origin=origin,
                version=profile_version,
            )
            for k in range(n)
        )
        return RuleBase(
            rules=rules,
            clusterer=EvolvingClusterer.from_clusters(ecm, clusters, dim, next_cluster_id=n),
            ecm=ecm,
            inference=params,
            profile_version=profile_version,
            next_rule_id=n,
            dim=dim,
        )

    return make


@pytest.fixture(name="training_set")
def fixture_training_set():
    """100 phish + 100 ham synthetic short vectors"""
    return SyntheticCorpus(seed=7).labeled(100, 100)


@pytest.fixture(name="trained")
def fixture_trained(training_set):
    return bootstrap_rulebase(training_set.X, training_set.labels)


@pytest.fixture(name="store")
def fixture_store(tmp_path):
    return ProfileStore(str(tmp_path / "profiles"))


@pytest.fixture(name="trained_store")
def fixture_trained_store(store, trained):
    store.persist_and_activate(trained, event="train")
    return store
