import random

import pytest

from ztrv import (
    ExecutionContext,
    IssuerKey,
    Keystore,
    PaymentPayload,
    VerificationRequest,
    issue_mandate,
)

# fixed virtual "now" used across tests (unix ms)
T0 = 1_700_000_000_000


@pytest.fixture(scope="session")
def issuer():
    return IssuerKey.generate("test-issuer", rng=random.Random(0xA11CE))


@pytest.fixture(scope="session")
def keystore(issuer):
    return Keystore.for_issuers(issuer)


@pytest.fixture
def context():
    return ExecutionContext(task_id="t1", agent_id="a1", merchant_id="m1",
                            scope="s1")


@pytest.fixture
def make_request(issuer):
    """Build a valid VerificationRequest; rng seeded per call for isolation."""
    counter = iter(range(10 ** 9))

    def _make(context=None, now=T0, amount=4999, currency="USD", seed=None):
        if context is None:
            context = ExecutionContext(task_id=f"task-{next(counter)}",
                                       agent_id="a1", merchant_id="m1",
                                       scope="/checkout/confirm")
        rng = random.Random(seed if seed is not None else next(counter))
        mandate = issue_mandate(issuer, context,
                                PaymentPayload(amount, currency),
                                now=now, rng=rng)
        return VerificationRequest(mandate, context)

    return _make
