"""HTTP mediation layer: verify every mandate, forward only accepted ones.

The gateway sits between agents and a merchant/PSP backend.  A request is
forwarded upstream only after the full verification pipeline accepts it, so
rejection happens before any externally observable side effect.  Rejections
are always HTTP 403 carrying the Decision JSON, including oversized or
unparseable bodies (fail-closed: there is no 400 path).

A mock merchant backend with an append-only ledger is included; the ledger
is the ground truth for "did an attack reach the payment infrastructure"
in end-to-end tests.
"""

from __future__ import annotations

import json
import logging
import threading
import urllib.error
import urllib.parse
import urllib.request
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .clock import SimClock
from .mandate import Keystore, WireFormatError, request_from_wire
from .registry import NonceRegistry
from .verifier import Decision, Mode, Outcome, Reason, VerifierConfig, verify

log = logging.getLogger("ztrv.gateway")

DEFAULT_BODY_LIMIT = 64 * 1024
UPSTREAM_TIMEOUT_S = 10.0


class ConfigError(ValueError):
    """Configuration file invalid; message names the offending field."""


@dataclass(frozen=True)
class GatewayConfig:
    listen_address: str
    upstream_url: str
    keystore_path: str
    verifier: VerifierConfig = field(default_factory=VerifierConfig)
    request_body_limit: int = DEFAULT_BODY_LIMIT


def parse_listen_address(address: str) -> tuple[str, int]:
    host, sep, port_text = address.rpartition(":")
    if not sep or not host:
        raise ConfigError("listen_address must be host:port")
    try:
        port = int(port_text)
    except ValueError:
        raise ConfigError("listen_address port must be an integer") from None
    if not 0 <= port <= 65535:
        raise ConfigError("listen_address port out of range")
    return host, port


_CONFIG_KEYS = frozenset({
    "listen_address", "upstream_url", "keystore_path", "request_body_limit",
    "mode", "window", "skew_tolerance", "context_fields",
})


def _config_str(obj: dict, key: str) -> str:
    value = obj.get(key)
    if not isinstance(value, str) or not value:
        raise ConfigError(f"{key} must be a non-empty string")
    return value


def _config_number(obj: dict, key: str, default):
    value = obj.get(key, default)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key} must be a number")
    return value


def load_config(path) -> GatewayConfig:
    """Parse and validate the flat JSON config; unknown keys are errors."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(obj) - _CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")

    listen_address = _config_str(obj, "listen_address")
    parse_listen_address(listen_address)

    upstream_url = _config_str(obj, "upstream_url")
    parts = urllib.parse.urlsplit(upstream_url)
    if parts.scheme not in ("http", "https") or not parts.netloc:
        raise ConfigError("upstream_url must be an http(s) URL")

    keystore_path = _config_str(obj, "keystore_path")

    limit = obj.get("request_body_limit", DEFAULT_BODY_LIMIT)
    if isinstance(limit, bool) or not isinstance(limit, int) or limit <= 0:
        raise ConfigError("request_body_limit must be a positive integer")

    mode_name = obj.get("mode", Mode.FULL.value)
    if not isinstance(mode_name, str):
        raise ConfigError("mode must be a string")
    try:
        mode = Mode.parse(mode_name)
    except ValueError as exc:
        raise ConfigError(f"mode: {exc}") from exc

    fields = obj.get("context_fields")
    if fields is not None:
        if (not isinstance(fields, list)
                or any(not isinstance(f, str) for f in fields)):
            raise ConfigError("context_fields must be a list of strings")
        fields = tuple(fields)

    try:
        kwargs = {
            "mode": mode,
            "window": float(_config_number(obj, "window", 60.0)),
            "skew_tolerance": float(_config_number(obj, "skew_tolerance", 0.0)),
        }
        if fields is not None:
            kwargs["context_fields"] = fields
        verifier_config = VerifierConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    return GatewayConfig(
        listen_address=listen_address,
        upstream_url=upstream_url,
        keystore_path=keystore_path,
        verifier=verifier_config,
        request_body_limit=limit,
    )


# ---------------------------------------------------------------------------
# HTTP plumbing shared by gateway and mock merchant
# ---------------------------------------------------------------------------

class _HttpService:
    """ThreadingHTTPServer wrapper with background start/stop."""

    def __init__(self, host: str, port: int, handler_cls):
        self._server = ThreadingHTTPServer((host, port), handler_cls)
        self._server.daemon_threads = True
        self._thread: threading.Thread | None = None

    @property
    def host(self) -> str:
        return self._server.server_address[0]

    @property
    def port(self) -> int:
        return self._server.server_port

    @property
    def base_url(self) -> str:
        return f"http://{self.host}:{self.port}"

    def start(self) -> "_HttpService":
        # small poll interval so shutdown() returns promptly
        self._thread = threading.Thread(
            target=self._server.serve_forever, kwargs={"poll_interval": 0.05},
            daemon=True)
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self._server.serve_forever()

    def shutdown(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc_info):
        self.shutdown()


class _JsonHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    def log_message(self, format, *args):  # noqa: A002 - stdlib signature
        log.debug("%s %s", self.address_string(), format % args)

    def send_payload(self, status: int, body: bytes,
                     content_type: str = "application/json",
                     extra_headers: dict | None = None) -> None:
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        for name, value in (extra_headers or {}).items():
            self.send_header(name, value)
        if self.close_connection:
            self.send_header("Connection", "close")
        self.end_headers()
        self.wfile.write(body)

    def send_json(self, status: int, obj,
                  extra_headers: dict | None = None) -> None:
        self.send_payload(status, json.dumps(obj).encode("utf-8"),
                          extra_headers=extra_headers)


# ---------------------------------------------------------------------------
# Gateway
# ---------------------------------------------------------------------------

def _malformed(detail: str) -> Decision:
    del detail  # kept out of the wire response; reasons are a closed set
    return Decision(outcome=Outcome.REJECT, reason=Reason.MALFORMED_REQUEST,
                    mandate_id="")


class ZtrvGateway(_HttpService):
    """The verification gateway service.

    All handler threads share one registry, so the exactly-one-accept
    property holds across concurrent HTTP requests.  The clock is
    injectable for tests; by default it reads a never-backward wall clock.
    """

    def __init__(self, config: GatewayConfig, *,
                 keystore: Keystore | None = None,
                 registry: NonceRegistry | None = None,
                 clock: SimClock | None = None):
        self.config = config
        self.keystore = keystore if keystore is not None \
            else Keystore.from_file(config.keystore_path)
        self.registry = registry if registry is not None else NonceRegistry()
        self.clock = clock if clock is not None else SimClock.wall()
        gateway = self

        class Handler(_JsonHandler):
            def do_POST(self):
                if self.path != "/execute":
                    self.send_json(404, {"error": "not found"})
                    return
                body = self._read_body()
                if body is None:
                    # oversized or unreadable: reject without parsing and
                    # drop the connection rather than draining the stream
                    self.close_connection = True
                    self.send_json(403, _malformed("unreadable body").to_wire())
                    return
                status, payload, headers = gateway.handle_execute(body)
                self.send_payload(status, payload, extra_headers=headers)

            def do_GET(self):
                if self.path == "/healthz":
                    self.send_payload(200, b"ok", content_type="text/plain")
                elif self.path == "/stats":
                    stats = gateway.registry.stats()
                    self.send_json(200, {
                        "live_count": stats.live_count,
                        "peak_count": stats.peak_count,
                        "evicted_total": stats.evicted_total,
                        "bytes_estimate": stats.bytes_estimate,
                    })
                else:
                    self.send_json(404, {"error": "not found"})

            def _read_body(self) -> bytes | None:
                if "Transfer-Encoding" in self.headers:
                    return None
                length_text = self.headers.get("Content-Length")
                if length_text is None:
                    return None
                try:
                    length = int(length_text)
                except ValueError:
                    return None
                if length < 0 or length > gateway.config.request_body_limit:
                    return None
                try:
                    return self.rfile.read(length)
                except OSError:
                    return None

        host, port = parse_listen_address(config.listen_address)
        super().__init__(host, port, Handler)

    def handle_execute(self, body: bytes) -> tuple[int, bytes, dict]:
        """Core /execute logic; returns (status, response body, headers)."""
        try:
            obj = json.loads(body)
            request = request_from_wire(obj)
        except (ValueError, WireFormatError, UnicodeDecodeError):
            decision = _malformed("unparseable request")
            return 403, json.dumps(decision.to_wire()).encode("utf-8"), {}

        decision = verify(request, self.clock.now_ms(), self.config.verifier,
                          self.registry, self.keystore)
        if not decision.accepted:
            return 403, json.dumps(decision.to_wire()).encode("utf-8"), {}
        return self._forward(body, decision)

    def _forward(self, body: bytes, decision: Decision) -> tuple[int, bytes, dict]:
        upstream = urllib.request.Request(
            self.config.upstream_url, data=body, method="POST",
            headers={"Content-Type": "application/json",
                     "X-ZTRV-Decision": "ACCEPT"})
        headers = {"X-ZTRV-Decision": "ACCEPT"}
        try:
            with urllib.request.urlopen(upstream,
                                        timeout=UPSTREAM_TIMEOUT_S) as resp:
                return resp.status, resp.read(), headers
        except urllib.error.HTTPError as exc:
            # the upstream answered; relay its status and body as-is
            return exc.code, exc.read(), headers
        except (urllib.error.URLError, OSError) as exc:
            log.warning("upstream unreachable after accept: %s", exc)
            # the nonce stays consumed: releasing it would reopen the
            # replay window; retry means issuing a fresh mandate
            payload = {"decision": decision.to_wire(),
                       "error": "upstream unreachable"}
            return 502, json.dumps(payload).encode("utf-8"), headers


# ---------------------------------------------------------------------------
# Mock merchant backend
# ---------------------------------------------------------------------------

class MerchantLedger:
    """Append-only record of fulfilled mandate ids with arrival time."""

    def __init__(self):
        self._lock = threading.Lock()
        self._entries: list[tuple[str, int]] = []

    def record(self, mandate_id: str, at_ms: int) -> None:
        with self._lock:
            self._entries.append((mandate_id, at_ms))

    def entries(self) -> list[tuple[str, int]]:
        with self._lock:
            return list(self._entries)

    def count(self, mandate_id: str) -> int:
        with self._lock:
            return sum(1 for mid, _ in self._entries if mid == mandate_id)

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)


class MockMerchant(_HttpService):
    """Trivial upstream: acknowledges everything and writes the ledger."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0,
                 clock: SimClock | None = None):
        self.ledger = MerchantLedger()
        self.clock = clock if clock is not None else SimClock.wall()
        merchant = self

        class Handler(_JsonHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0) or 0)
                body = self.rfile.read(length) if length > 0 else b""
                mandate_id = ""
                try:
                    obj = json.loads(body)
                    mandate_id = obj["mandate"]["mandate_id"]
                except (ValueError, KeyError, TypeError):
                    pass
                merchant.ledger.record(mandate_id, merchant.clock.now_ms())
                self.send_json(200, {"fulfilled": mandate_id})

            def do_GET(self):
                if self.path == "/ledger":
                    entries = [{"mandate_id": mid, "at_ms": at}
                               for mid, at in merchant.ledger.entries()]
                    self.send_json(200, {"entries": entries})
                else:
                    self.send_json(404, {"error": "not found"})

        super().__init__(host, port, Handler)
