"""HTTP JSON API for the human-calibration review UI.

Endpoints (all under /api): queue, image/{id}, categories, decision (POST),
progress.  Decision writes are serialized through one lock, appended to the
decision log, and the manifest is saved atomically after each one, so
concurrent reviewer tabs are safe and a stale tab's verdict on an inactive
image gets a 409.  The UI's static assets, when built, are served from a
directory passed at startup.
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

from .calibration import (
    CalibrationDecision,
    CalibrationError,
    InactiveImageError,
    UnknownImageError,
    append_decision,
    apply_decision,
    calibration_queue,
    decision_log_path,
    load_decisions,
    now_timestamp,
    progress,
    replay_decisions,
)
from .manifest import Manifest, load_manifest, save_manifest

_STATIC_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".map": "application/json",
    ".svg": "image/svg+xml",
}


def _image_content_type(data: bytes) -> str:
    if data[:2] == b"\xff\xd8":
        return "image/jpeg"
    if data[:8] == b"\x89PNG\r\n\x1a\n":
        return "image/png"
    return "application/octet-stream"


class CalibrationState:
    """Shared mutable state behind the handler: manifest + decision log."""

    def __init__(self, manifest_path: str | Path, ui_dir: str | Path | None = None) -> None:
        self.manifest_path = Path(manifest_path)
        self.ui_dir = Path(ui_dir) if ui_dir else None
        self.lock = threading.Lock()
        self.manifest: Manifest = load_manifest(self.manifest_path)
        if "foodness" not in self.manifest.completed_stages():
            raise CalibrationError("calibration needs the foodness stage completed")
        self.log_path = decision_log_path(self.manifest_path)
        self.decisions = load_decisions(self.log_path)
        # fold any log entries from a previous session into the loaded manifest
        replay_decisions(self.manifest, self.decisions)

    def submit(self, d: CalibrationDecision) -> None:
        with self.lock:
            apply_decision(self.manifest, d)
            append_decision(self.log_path, d)
            self.decisions.append(d)
            save_manifest(self.manifest, self.manifest_path)


class _Handler(BaseHTTPRequestHandler):
    state: CalibrationState  # injected by make_server

    def log_message(self, fmt: str, *args) -> None:  # quiet by default
        pass

    def _send(self, code: int, body: bytes, content_type: str) -> None:
        self.send_response(code)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.end_headers()
        self.wfile.write(body)

    def _json(self, code: int, obj) -> None:
        self._send(code, json.dumps(obj).encode("utf-8"), "application/json")

    def do_OPTIONS(self) -> None:  # noqa: N802 (stdlib handler naming)
        self._send(204, b"", "text/plain")

    def do_GET(self) -> None:  # noqa: N802
        url = urlparse(self.path)
        state = self.state
        if url.path == "/api/queue":
            params = parse_qs(url.query)
            limit = int(params["limit"][0]) if "limit" in params else 50
            category = int(params["category"][0]) if "category" in params else None
            with state.lock:
                items = calibration_queue(
                    state.manifest, state.decisions, category_id=category, limit=limit
                )
            self._json(200, items)
        elif url.path.startswith("/api/image/"):
            image_id = url.path.rsplit("/", 1)[1]
            with state.lock:
                record = next(
                    (r for r in state.manifest.records if r.id == image_id), None
                )
            if record is None:
                self._json(404, {"error": f"unknown image {image_id!r}"})
                return
            try:
                data = Path(record.source_path).read_bytes()
            except OSError:
                self._json(404, {"error": "source file unavailable"})
                return
            self._send(200, data, _image_content_type(data))
        elif url.path == "/api/categories":
            with state.lock:
                cats = [
                    {"id": c.id, "name": c.name, "group": c.group, "synonyms": c.synonyms}
                    for c in state.manifest.categories
                ]
            self._json(200, cats)
        elif url.path == "/api/progress":
            with state.lock:
                self._json(200, progress(state.manifest, state.decisions))
        else:
            self._static(url.path)

    def _static(self, path: str) -> None:
        if self.state.ui_dir is None:
            self._send(
                200,
                b"calibration API running; no review UI assets configured\n",
                "text/plain; charset=utf-8",
            )
            return
        rel = "index.html" if path in ("", "/") else path.lstrip("/")
        target = (self.state.ui_dir / rel).resolve()
        if not str(target).startswith(str(self.state.ui_dir.resolve())) or not target.is_file():
            self._json(404, {"error": "not found"})
            return
        ctype = _STATIC_TYPES.get(target.suffix, "application/octet-stream")
        self._send(200, target.read_bytes(), ctype)

    def do_POST(self) -> None:  # noqa: N802
        url = urlparse(self.path)
        if url.path != "/api/decision":
            self._json(404, {"error": "not found"})
            return
        length = int(self.headers.get("Content-Length", "0"))
        try:
            body = json.loads(self.rfile.read(length).decode("utf-8"))
            decision = CalibrationDecision(
                image_id=body["image_id"],
                action=body["action"],
                category_id=body.get("category_id"),
                reason=body.get("reason"),
                reviewer=body.get("reviewer", "anonymous"),
                timestamp=body.get("timestamp") or now_timestamp(),
            )
        except (json.JSONDecodeError, KeyError, CalibrationError) as exc:
            self._json(400, {"error": str(exc)})
            return
        try:
            self.state.submit(decision)
        except UnknownImageError as exc:
            self._json(404, {"error": str(exc)})
            return
        except InactiveImageError as exc:
            self._json(409, {"error": str(exc)})
            return
        except CalibrationError as exc:
            self._json(400, {"error": str(exc)})
            return
        with self.state.lock:
            prog = progress(self.state.manifest, self.state.decisions)
        self._json(200, {"ok": True, "progress": prog})


def make_server(
    manifest_path: str | Path,
    host: str = "127.0.0.1",
    port: int = 8765,
    ui_dir: str | Path | None = None,
) -> ThreadingHTTPServer:
    """Build (but do not start) the calibration server; port 0 picks a free port."""
    state = CalibrationState(manifest_path, ui_dir=ui_dir)
    handler = type("BoundHandler", (_Handler,), {"state": state})
    return ThreadingHTTPServer((host, port), handler)


def serve_forever(server: ThreadingHTTPServer) -> None:
    host, port = server.server_address[:2]
    print(f"calibration server listening on http://{host}:{port}/")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
