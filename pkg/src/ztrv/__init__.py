"""Zero-trust runtime verifier for mandate-based agentic payments.

Fail-closed verification gateway enforcing context-aware binding and
consume-once nonce semantics, plus a deterministic adversarial simulation
harness for evaluating it.
"""

from .clock import SimClock, ClockMode, VIRTUAL_EPOCH_MS
from .mandate import (
    ExecutionContext,
    IssuerKey,
    Keystore,
    Mandate,
    PaymentPayload,
    VerificationRequest,
    WireFormatError,
    canonical_encode,
    compute_context_hash,
    hash_context_fields,
    issue_mandate,
    mandate_from_wire,
    mandate_to_wire,
    request_from_wire,
    request_to_wire,
    verify_signature,
)
from .registry import NonceRegistry, RegistryStats
from .verifier import (
    Decision,
    Mode,
    Outcome,
    Reason,
    StageTimings,
    VerifierConfig,
    verify,
    verify_instrumented,
)
from .gateway import ConfigError, GatewayConfig, MockMerchant, ZtrvGateway, load_config
from .simharness import (
    AttackKind,
    AttackScenario,
    SimReport,
    ThroughputPoint,
    TimedRequest,
    TtlSweepPoint,
    ablation_run,
    attack_eval,
    capacity_probe,
    gen_legit_workload,
    inject_attack,
    interception_matrix,
    run_experiment,
    sim_issuer,
    throughput_bench,
    ttl_sweep,
)

__version__ = "0.1.0"

__all__ = [
    "AttackKind",
    "AttackScenario",
    "ClockMode",
    "ConfigError",
    "Decision",
    "ExecutionContext",
    "GatewayConfig",
    "IssuerKey",
    "Keystore",
    "Mandate",
    "MockMerchant",
    "Mode",
    "NonceRegistry",
    "Outcome",
    "PaymentPayload",
    "Reason",
    "RegistryStats",
    "SimClock",
    "SimReport",
    "StageTimings",
    "ThroughputPoint",
    "TimedRequest",
    "TtlSweepPoint",
    "VIRTUAL_EPOCH_MS",
    "VerificationRequest",
    "VerifierConfig",
    "WireFormatError",
    "ZtrvGateway",
    "ablation_run",
    "attack_eval",
    "canonical_encode",
    "capacity_probe",
    "compute_context_hash",
    "gen_legit_workload",
    "hash_context_fields",
    "inject_attack",
    "interception_matrix",
    "issue_mandate",
    "load_config",
    "mandate_from_wire",
    "mandate_to_wire",
    "request_from_wire",
    "request_to_wire",
    "run_experiment",
    "sim_issuer",
    "throughput_bench",
    "ttl_sweep",
    "verify",
    "verify_instrumented",
    "verify_signature",
]
