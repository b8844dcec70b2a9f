"""Walk one mandate through the verification pipeline, then break it.

Shows the decision for: a fresh valid request, an immediate replay, a
tampered amount, a stale mandate, and a merchant swap.
"""

import dataclasses
import time

from ztrv import (
    ExecutionContext,
    IssuerKey,
    Keystore,
    NonceRegistry,
    PaymentPayload,
    VerificationRequest,
    VerifierConfig,
    issue_mandate,
    verify,
)


def show(label: str, decision) -> None:
    print(f"  {label:<28} -> {decision.outcome.value:6} ({decision.reason.value})")


def main() -> None:
    issuer = IssuerKey.generate("demo-issuer")
    keystore = Keystore.for_issuers(issuer)
    registry = NonceRegistry()
    config = VerifierConfig(window=60.0)
    now = int(time.time() * 1000)

    context = ExecutionContext(task_id="book-flight-0042",
                               agent_id="travel-agent",
                               merchant_id="skyline-air",
                               scope="payment:flights")
    mandate = issue_mandate(issuer, context, PaymentPayload(48_900, "USD"), now)
    request = VerificationRequest(context=context, mandate=mandate)

    print(f"mandate {mandate.mandate_id} bound to {context.merchant_id}, "
          f"{context.scope}, {mandate.payload.amount / 100:.2f} USD")
    show("first use", verify(request, now, config, registry, keystore))
    show("identical replay", verify(request, now + 5, config, registry, keystore))

    tampered = dataclasses.replace(mandate, payload=PaymentPayload(999_900, "USD"))
    show("amount tampered",
         verify(VerificationRequest(context=context, mandate=tampered),
                now + 10, config, registry, keystore))

    stale = issue_mandate(issuer, context, PaymentPayload(48_900, "USD"),
                          now - 120_000)
    show("issued 120s ago",
         verify(VerificationRequest(context=context, mandate=stale),
                now + 15, config, registry, keystore))

    moved = dataclasses.replace(context, merchant_id="shady-reseller")
    fresh = issue_mandate(issuer, context, PaymentPayload(48_900, "USD"), now)
    show("replayed at other merchant",
         verify(VerificationRequest(context=moved, mandate=fresh),
                now + 20, config, registry, keystore))

    stats = registry.stats()
    print(f"registry: {stats.live_count} live nonce(s), "
          f"peak {stats.peak_count}, ~{stats.bytes_estimate} bytes")


if __name__ == "__main__":
    main()
