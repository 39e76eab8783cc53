"""A label-only prediction service over HTTP/1.1 with query accounting.

Wire schema (all responses carry ``schema_version``):

* ``POST /v1/predict``  body ``{"instances": [[f64, ...], ...]}``
  reply ``{"labels": [int, ...], "queries_used": int}``
* ``GET /v1/stats``     reply ``{"queries_used", "cap", "dp_mechanism", "model_spec"}``
* ``POST /v1/probs``    body as predict, reply ``{"probs": [[f64, ...], ...]}``
  (403 unless the service was started with probabilities exposed; never
  counted against the ledger)

Errors are JSON bodies ``{"error": <tag>, ...}``: ``batch_too_large``
(413), ``budget_exhausted`` (429, with ``used``), ``probs_disabled``
(403), ``malformed_json`` / ``bad_request`` (400), ``not_found`` (404).
Per-instance ledger counting and the cap check happen atomically in the
shared ``TargetHandle``, so concurrent clients cannot over-spend.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from .errors import BudgetExhaustedError
from .models import load_model
from .oracle import DpConfig, TargetHandle

SCHEMA_VERSION = 1


@dataclass
class ServerConfig:
    model_path: str
    bind: str = "127.0.0.1"
    port: int = 8080
    cap: int | None = None
    dp: DpConfig | None = None
    expose_probs: bool = False
    max_batch: int = 256

    def __post_init__(self):
        if self.max_batch < 1:
            raise ValueError("max_batch must be >= 1")


class _Server(ThreadingHTTPServer):
    # enough listen backlog for bursts of concurrent clients
    request_queue_size = 128
    daemon_threads = True


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = "mextract"

    def log_message(self, fmt, *args):  # keep test output quiet
        pass

    def _send(self, status: int, payload: dict):
        payload = dict(payload)
        payload["schema_version"] = SCHEMA_VERSION
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _read_instances(self):
        length = int(self.headers.get("Content-Length", 0))
        raw = self.rfile.read(length)
        try:
            doc = json.loads(raw.decode("utf-8"))
        except json.JSONDecodeError as e:
            self._send(400, {"error": "malformed_json", "position": e.pos})
            return None
        instances = doc.get("instances") if isinstance(doc, dict) else None
        if not isinstance(instances, list) or not instances:
            self._send(400, {"error": "bad_request", "detail": "instances must be a non-empty list"})
            return None
        service = self.server.service
        if len(instances) > service.config.max_batch:
            self._send(413, {"error": "batch_too_large", "max_batch": service.config.max_batch})
            return None
        try:
            X = np.asarray(instances, dtype=np.float64)
        except (TypeError, ValueError):
            self._send(400, {"error": "bad_request", "detail": "instances must be numeric rows"})
            return None
        if X.ndim != 2 or X.shape[1] != service.handle.model.spec.input_dim:
            self._send(
                400,
                {
                    "error": "bad_request",
                    "detail": f"each instance needs {service.handle.model.spec.input_dim} features",
                },
            )
            return None
        return X

    def do_POST(self):
        service = self.server.service
        if self.path == "/v1/predict":
            X = self._read_instances()
            if X is None:
                return
            try:
                labels = service.handle.query_labels(X)
            except BudgetExhaustedError as e:
                self._send(429, {"error": "budget_exhausted", "used": e.ledger})
                return
            self._send(
                200,
                {"labels": [int(v) for v in labels], "queries_used": service.handle.ledger},
            )
        elif self.path == "/v1/probs":
            if not service.config.expose_probs:
                self._send(403, {"error": "probs_disabled"})
                return
            X = self._read_instances()
            if X is None:
                return
            probs = service.handle.white_box_probs(X)
            self._send(200, {"probs": [[float(v) for v in row] for row in probs]})
        else:
            self._send(404, {"error": "not_found"})

    def do_GET(self):
        service = self.server.service
        if self.path == "/v1/stats":
            self._send(
                200,
                {
                    "queries_used": service.handle.ledger,
                    "cap": service.config.cap,
                    "dp_mechanism": service.handle.dp.mechanism,
                    "model_spec": service.handle.model.spec.to_dict(),
                },
            )
        else:
            self._send(404, {"error": "not_found"})


class PredictionService:
    """Owns the HTTP server and the shared target handle behind it."""

    def __init__(self, config: ServerConfig):
        model = load_model(config.model_path)
        self.config = config
        self.handle = TargetHandle.in_process(
            model,
            cap=config.cap,
            dp=config.dp,
            eval_channel_enabled=config.expose_probs,
        )
        self._httpd = _Server((config.bind, config.port), _Handler)
        self._httpd.service = self
        self._thread: threading.Thread | None = None

    @property
    def port(self) -> int:
        return self._httpd.server_address[1]

    @property
    def url(self) -> str:
        return f"http://{self._httpd.server_address[0]}:{self.port}"

    def start_background(self) -> "PredictionService":
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def serve_forever(self):
        self._httpd.serve_forever()

    def shutdown(self):
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)


def serve(config: ServerConfig) -> PredictionService:
    """Start a service and block until interrupted (CLI entry).

    Raises on an unloadable model or an unavailable port before serving
    anything, so startup failures surface as process errors.
    """
    service = PredictionService(config)
    try:
        service.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        service.shutdown()
    return service
