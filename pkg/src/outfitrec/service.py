"""Read-only JSON-over-HTTP query server.

Endpoints::

    POST /v1/recommend   body: Query JSON      -> Recommendation JSON
    GET  /v1/health                            -> artifact inventory and metadata

Status codes for ``/v1/recommend``: 200 ok, 400 malformed query, 415 wrong
content type, 422 colour-wheel hue undefined, 503 artifact missing.
Artifacts are loaded once at startup and never mutated.
"""

from __future__ import annotations

import json
import logging
import os
import signal
import threading
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .errors import DomainMismatchError, MissingArtifactError, QueryError, UndefinedHueError, ValidationError
from .recommend import Artifacts, Query, Recommendation, dumps_recommendation, recommend
from .taxonomy import SCHEMA_PAIRS

log = logging.getLogger(__name__)

MAX_BODY = 16 << 20
ENV_PREFIX = "OUTFITREC_"


def answer(data, art: Artifacts) -> Recommendation:
    """Shared query path of the CLI and the server."""
    return recommend(Query.from_dict(data), art)


def health(art: Artifacts) -> dict:
    missing = list(art.metadata.get("missing", []))
    loaded = {
        "catalog": art.catalog is not None,
        "palettes": sorted(c.value for c in art.palettes),
        "color_matrices": [k.name for k in SCHEMA_PAIRS if k in art.color_matrices],
        "pattern_matrices": [k.name for k in SCHEMA_PAIRS if k in art.pattern_matrices],
        "joint_tables": [k.name for k in SCHEMA_PAIRS if k in art.joint_tables],
        "inventory_features": art.inventory_features is not None,
    }
    meta = {k: v for k, v in art.metadata.items() if k != "missing"}
    return {"status": "degraded" if missing else "ok", "loaded": loaded, "missing": missing, "metadata": meta}


class ServiceState:
    """Immutable artifacts plus the precomputed health body."""

    def __init__(self, artifacts: Artifacts):
        self.artifacts = artifacts
        self.health_body = json.dumps(health(artifacts), sort_keys=True).encode("utf-8")


def _error(status, message, field=None):
    body = {"error": {"status": int(status), "message": message}}
    if field is not None:
        body["error"]["field"] = field
    return status, json.dumps(body, sort_keys=True).encode("utf-8")


def handle_recommend(state: ServiceState, content_type, body: bytes):
    """Pure request handler: returns ``(status, body bytes)``."""
    media = (content_type or "").split(";")[0].strip().lower()
    if media != "application/json":
        return _error(HTTPStatus.UNSUPPORTED_MEDIA_TYPE, "content type must be application/json")
    try:
        data = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        return _error(HTTPStatus.BAD_REQUEST, f"body is not valid JSON: {exc}")
    try:
        rec = answer(data, state.artifacts)
    except QueryError as exc:
        return _error(HTTPStatus.BAD_REQUEST, exc.message, exc.field)
    except ValidationError as exc:
        return _error(HTTPStatus.BAD_REQUEST, exc.message, exc.field)
    except UndefinedHueError as exc:
        return _error(HTTPStatus.UNPROCESSABLE_ENTITY, str(exc))
    except MissingArtifactError as exc:
        return _error(HTTPStatus.SERVICE_UNAVAILABLE, str(exc))
    except DomainMismatchError as exc:
        return _error(HTTPStatus.SERVICE_UNAVAILABLE, f"inconsistent artifacts: {exc}")
    return HTTPStatus.OK, dumps_recommendation(rec).encode("utf-8")


class _Handler(BaseHTTPRequestHandler):
    server_version = "outfitrec"
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):
        log.info("%s %s", self.address_string(), fmt % args)

    def _send(self, status, body: bytes):
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):
        if self.path == "/v1/health":
            self._send(HTTPStatus.OK, self.server.state.health_body)
        else:
            self._send(*_error(HTTPStatus.NOT_FOUND, f"no route {self.path}"))

    def do_POST(self):
        if self.path != "/v1/recommend":
            self._send(*_error(HTTPStatus.NOT_FOUND, f"no route {self.path}"))
            return
        try:
            length = int(self.headers.get("Content-Length", "0"))
        except ValueError:
            length = -1
        if length < 0 or length > MAX_BODY:
            self.close_connection = True
            self._send(*_error(HTTPStatus.BAD_REQUEST, "invalid Content-Length"))
            return
        body = self.rfile.read(length)
        try:
            status, payload = handle_recommend(self.server.state, self.headers.get("Content-Type"), body)
        except Exception:  # noqa: BLE001
            log.exception("internal error")
            status, payload = _error(HTTPStatus.INTERNAL_SERVER_ERROR, "internal error")
        self._send(status, payload)


class RecommendServer(ThreadingHTTPServer):
    daemon_threads = False  # shutdown joins in-flight request threads
    block_on_close = True

    def __init__(self, address, state: ServiceState):
        self.state = state
        super().__init__(address, _Handler)


def make_server(cfg, artifacts: Artifacts | None = None) -> RecommendServer:
    from .pipeline import load_artifacts

    art = artifacts if artifacts is not None else load_artifacts(cfg)
    return RecommendServer((cfg.host, cfg.port), ServiceState(art))


def config_from_env(cfg):
    """Apply ``OUTFITREC_HOST``, ``OUTFITREC_PORT`` and ``OUTFITREC_OUTPUT_DIR``.

    The command line applies these over the config file and under its flags.
    """
    kw = {}
    if os.environ.get(ENV_PREFIX + "HOST"):
        kw["host"] = os.environ[ENV_PREFIX + "HOST"]
    if os.environ.get(ENV_PREFIX + "PORT"):
        try:
            kw["port"] = int(os.environ[ENV_PREFIX + "PORT"])
        except ValueError:
            raise ValidationError("must be an integer", field=ENV_PREFIX + "PORT") from None
    if os.environ.get(ENV_PREFIX + "OUTPUT_DIR"):
        kw["output_dir"] = os.environ[ENV_PREFIX + "OUTPUT_DIR"]
    return cfg.override(**kw)


def serve(cfg):
    """Block serving until SIGINT/SIGTERM, then finish in-flight requests."""
    server = make_server(cfg)
    host, port = server.server_address[:2]
    log.warning("serving on http://%s:%d (%s)", host, port, json.loads(server.state.health_body)["status"])

    def stop(signum, frame):
        threading.Thread(target=server.shutdown, daemon=True).start()

    previous = {s: signal.signal(s, stop) for s in (signal.SIGINT, signal.SIGTERM)}
    try:
        server.serve_forever()
    finally:
        server.server_close()
        for s, h in previous.items():
            signal.signal(s, h)
