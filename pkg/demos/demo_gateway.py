"""End-to-end HTTP round trip: agent -> gateway -> merchant.

Starts a mock merchant and the verification gateway on ephemeral ports,
submits the same signed request twice, and prints what each hop saw.
"""

import json
import time
import urllib.error
import urllib.request

from ztrv import (
    ExecutionContext,
    GatewayConfig,
    IssuerKey,
    Keystore,
    MockMerchant,
    PaymentPayload,
    VerificationRequest,
    VerifierConfig,
    ZtrvGateway,
    issue_mandate,
    request_to_wire,
)


def post(url: str, body: bytes):
    req = urllib.request.Request(url, data=body, method="POST",
                                 headers={"Content-Type": "application/json"})
    try:
        with urllib.request.urlopen(req, timeout=10) as resp:
            return resp.status, json.loads(resp.read())
    except urllib.error.HTTPError as exc:
        return exc.code, json.loads(exc.read())


def main() -> None:
    issuer = IssuerKey.generate("demo-issuer")
    keystore = Keystore.for_issuers(issuer)

    with MockMerchant() as merchant:
        config = GatewayConfig(listen_address="127.0.0.1:0",
                               upstream_url=merchant.base_url,
                               keystore_path="(injected)",
                               verifier=VerifierConfig(window=60.0))
        with ZtrvGateway(config, keystore=keystore) as gateway:
            print(f"merchant at {merchant.base_url}, "
                  f"gateway at {gateway.base_url}")

            context = ExecutionContext(task_id="order-7731",
                                       agent_id="shopping-agent",
                                       merchant_id="book-barn",
                                       scope="payment:books")
            mandate = issue_mandate(issuer, context,
                                    PaymentPayload(2_350, "USD"),
                                    int(time.time() * 1000))
            body = json.dumps(request_to_wire(
                VerificationRequest(context=context, mandate=mandate))).encode()

            for attempt in (1, 2):
                status, payload = post(f"{gateway.base_url}/execute", body)
                print(f"attempt {attempt}: HTTP {status} {payload}")

            with urllib.request.urlopen(f"{gateway.base_url}/stats",
                                        timeout=10) as resp:
                print("gateway stats:", json.loads(resp.read()))
        print(f"merchant ledger has {len(merchant.ledger)} entry(ies); "
              "the replay never reached it")


if __name__ == "__main__":
    main()
