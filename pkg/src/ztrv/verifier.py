"""Fail-closed verification pipeline.

Stages run in a fixed order and short-circuit on the first failure:

  1. parse/shape      -> MalformedRequest
  2. signature        -> InvalidSignature   (unknown key_id included)
  3. freshness        -> MandateExpired     (stale or future-dated)
  4. context binding  -> ContextMismatch
  5. nonce consume    -> ReplayDetected

Only a request that passes every enabled stage is authorized; every other
path is an explicit rejection, and unexpected states reject rather than
accept.  Modes exist solely to ablate stages 4 and 5 in experiments;
production runs Mode.FULL.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import Enum

from .mandate import (
    DEFAULT_CONTEXT_FIELDS,
    Keystore,
    VerificationRequest,
    hash_context_fields,
    request_problem,
    verify_signature,
)
from .registry import NonceRegistry


class Mode(Enum):
    BASELINE = "baseline"
    CONTEXT_ONLY = "context-only"
    NONCE_ONLY = "nonce-only"
    FULL = "full"

    @property
    def checks_context(self) -> bool:
        return self in (Mode.CONTEXT_ONLY, Mode.FULL)

    @property
    def checks_nonce(self) -> bool:
        return self in (Mode.NONCE_ONLY, Mode.FULL)

    @classmethod
    def parse(cls, name: str) -> "Mode":
        for mode in cls:
            if mode.value == name:
                return mode
        raise ValueError(f"unknown mode {name!r}; expected one of "
                         + ", ".join(m.value for m in cls))


class Outcome(Enum):
    ACCEPT = "ACCEPT"
    REJECT = "REJECT"


class Reason(Enum):
    AUTHORIZED = "Authorized"
    MALFORMED_REQUEST = "MalformedRequest"
    INVALID_SIGNATURE = "InvalidSignature"
    MANDATE_EXPIRED = "MandateExpired"
    CONTEXT_MISMATCH = "ContextMismatch"
    REPLAY_DETECTED = "ReplayDetected"


@dataclass(frozen=True)
class Decision:
    outcome: Outcome
    reason: Reason
    mandate_id: str

    @property
    def accepted(self) -> bool:
        return self.outcome is Outcome.ACCEPT

    def to_wire(self) -> dict:
        return {
            "outcome": self.outcome.value,
            "reason": self.reason.value,
            "mandate_id": self.mandate_id,
        }


@dataclass(frozen=True)
class VerifierConfig:
    """Tunable verification policy.

    ``window`` (seconds) is both the freshness horizon and the nonce TTL:
    a nonce only needs to be remembered for exactly as long as its mandate
    could still pass the freshness check.  ``skew_tolerance`` (seconds)
    widens acceptance on both sides to absorb clock skew between issuer
    and verifier; it defaults to zero (no skew allowance).
    """

    mode: Mode = Mode.FULL
    window: float = 60.0
    skew_tolerance: float = 0.0
    context_fields: tuple[str, ...] = DEFAULT_CONTEXT_FIELDS

    def __post_init__(self):
        if self.window <= 0:
            raise ValueError("window must be positive")
        if self.skew_tolerance < 0:
            raise ValueError("skew_tolerance must be non-negative")
        if self.mode.checks_context and not self.context_fields:
            raise ValueError("context_fields must not be empty when context is enforced")
        unknown = [f for f in self.context_fields if f not in DEFAULT_CONTEXT_FIELDS]
        if unknown:
            raise ValueError(f"unknown context fields {unknown}")

    @property
    def window_ms(self) -> int:
        return int(round(self.window * 1000))

    @property
    def skew_ms(self) -> int:
        return int(round(self.skew_tolerance * 1000))


@dataclass(frozen=True)
class StageTimings:
    """Per-stage wall time in nanoseconds; stages that did not run report 0.

    ``total_ns`` is measured end to end and also covers parse and dispatch
    overhead, so it can exceed the sum of the stage fields.
    """

    signature_ns: int = 0
    context_ns: int = 0
    registry_ns: int = 0
    total_ns: int = 0


def _reject(reason: Reason, mandate_id: str) -> Decision:
    return Decision(outcome=Outcome.REJECT, reason=reason, mandate_id=mandate_id)


def verify_instrumented(request: VerificationRequest, now: int,
                        config: VerifierConfig, registry: NonceRegistry,
                        keystore: Keystore) -> tuple[Decision, StageTimings]:
    """Run the pipeline at time ``now`` (unix ms) and time each stage."""
    t_start = time.perf_counter_ns()
    signature_ns = 0
    context_ns = 0
    registry_ns = 0

    def done(decision: Decision) -> tuple[Decision, StageTimings]:
        return decision, StageTimings(
            signature_ns=signature_ns,
            context_ns=context_ns,
            registry_ns=registry_ns,
            total_ns=time.perf_counter_ns() - t_start,
        )

    # stage 1: shape. A request that cannot be fully validated is rejected
    # without looking at any of its contents.
    if request_problem(request) is not None:
        mandate = getattr(request, "mandate", None)
        mandate_id = mandate.mandate_id if isinstance(getattr(mandate, "mandate_id", None), str) else ""
        return done(_reject(Reason.MALFORMED_REQUEST, mandate_id))

    mandate = request.mandate

    # stage 2: signature over the canonical encoding, under the key named by
    # key_id. An unknown key_id is indistinguishable from a bad signature.
    t0 = time.perf_counter_ns()
    public_key = keystore.lookup(mandate.key_id)
    signature_ok = public_key is not None and verify_signature(mandate, public_key)
    signature_ns = time.perf_counter_ns() - t0
    if not signature_ok:
        return done(_reject(Reason.INVALID_SIGNATURE, mandate.mandate_id))

    # stage 3: freshness. Expired iff now - issued_at > window + skew;
    # equality is still fresh. Future-dating beyond skew is also rejected.
    age_ms = now - mandate.issued_at
    if age_ms > config.window_ms + config.skew_ms or -age_ms > config.skew_ms:
        return done(_reject(Reason.MANDATE_EXPIRED, mandate.mandate_id))

    # stage 4: context binding. The hash is recomputed from the observed
    # context; the mandate's stored hash must match exactly.
    if config.mode.checks_context:
        t0 = time.perf_counter_ns()
        observed = hash_context_fields(request.context, config.context_fields)
        context_ns = time.perf_counter_ns() - t0
        if observed != mandate.context_hash:
            return done(_reject(Reason.CONTEXT_MISMATCH, mandate.mandate_id))

    # stage 5: nonce consumption, the last stage so that a consumed nonce
    # always corresponds to an accepted request. TTL equals the freshness
    # window exactly: after that long the mandate is expired anyway.
    if config.mode.checks_nonce:
        t0 = time.perf_counter_ns()
        fresh = registry.consume_once("nonce:" + mandate.nonce, now,
                                      config.window_ms)
        registry_ns = time.perf_counter_ns() - t0
        if not fresh:
            return done(_reject(Reason.REPLAY_DETECTED, mandate.mandate_id))

    return done(Decision(outcome=Outcome.ACCEPT, reason=Reason.AUTHORIZED,
                         mandate_id=mandate.mandate_id))


def verify(request: VerificationRequest, now: int, config: VerifierConfig,
           registry: NonceRegistry, keystore: Keystore) -> Decision:
    return verify_instrumented(request, now, config, registry, keystore)[0]
