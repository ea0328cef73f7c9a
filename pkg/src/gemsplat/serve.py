"""Read-only HTTP endpoint feeding the coefficient-explorer viewer.

GET /model          serialized model bytes
GET /meta           JSON: texture size, texel count, components, stddevs
GET /cameras        JSON list of dataset cameras (may be empty)
GET /render?...     server-side render; ?k= comma floats (or "0"),
                    camera via ?cam=<dataset index> or ?az=&el=&dist=[&fov=]
                    orbit parameters, ?format=ppm|png
Static files from the configured directory are served at any other path.

The loaded model is immutable, so concurrent GETs are safe.
"""

from __future__ import annotations

import json
import os
import posixpath
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

import numpy as np

from .core import orbit_camera
from .eigenmodel import MODALITIES, CoefficientVector, evaluate, serialize
from .images import encode_png, encode_ppm
from .renderer import render_forward

_CONTENT_TYPES = {
    ".html": "text/html", ".js": "text/javascript", ".css": "text/css",
    ".json": "application/json", ".png": "image/png", ".ppm": "image/x-portable-pixmap",
    ".wasm": "application/wasm", ".map": "application/json",
}


class _State:
    def __init__(self, model, cameras, static_dir):
        self.model = model
        self.model_bytes = serialize(model)
        self.cameras = cameras or []
        self.static_dir = static_dir
        self.meta = json.dumps({
            "texWidth": model.tex_width,
            "texHeight": model.tex_height,
            "T": model.texel_count,
            "M": {m: model.bases[m].components for m in MODALITIES},
            "stddevs": {m: list(model.bases[m].stddev) for m in MODALITIES},
        }).encode()


class GemRequestHandler(BaseHTTPRequestHandler):
    state: _State = None

    def log_message(self, fmt, *args):  # quiet by default
        pass

    def _send(self, code, body, ctype="application/octet-stream"):
        self.send_response(code)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(body)

    def _error(self, code, message):
        self._send(code, json.dumps({"error": message}).encode(), "application/json")

    def do_GET(self):
        url = urlparse(self.path)
        query = parse_qs(url.query)
        try:
            if url.path == "/model":
                self._send(200, self.state.model_bytes)
            elif url.path == "/meta":
                self._send(200, self.state.meta, "application/json")
            elif url.path == "/cameras":
                body = json.dumps([c.to_json() for c in self.state.cameras]).encode()
                self._send(200, body, "application/json")
            elif url.path == "/render":
                self._render(query)
            else:
                self._static(url.path)
        except BrokenPipeError:
            pass

    def _parse_k(self, query):
        model = self.state.model
        raw = query.get("k", ["0"])[0]
        if raw.strip() in ("0", ""):
            return CoefficientVector.zeros_for(model)
        values = np.array([float(v) for v in raw.split(",")])
        return CoefficientVector.from_concat(values, model)

    def _parse_camera(self, query):
        if "cam" in query:
            idx = int(query["cam"][0])
            if not 0 <= idx < len(self.state.cameras):
                raise IndexError(f"camera {idx} not available")
            return self.state.cameras[idx]
        az = float(query.get("az", ["0"])[0])
        el = float(query.get("el", ["0"])[0])
        dist = float(query.get("dist", ["4"])[0])
        fov = float(query.get("fov", ["45"])[0])
        size = int(query.get("size", ["256"])[0])
        return orbit_camera(size, size, fov, az, el, dist)

    def _render(self, query):
        try:
            k = self._parse_k(query)
            cam = self._parse_camera(query)
        except Exception as exc:  # malformed query is the client's fault
            self._error(400, f"bad render request: {exc}")
            return
        if self.state.model is None:
            self._error(404, "no model loaded")
            return
        cloud = evaluate(self.state.model, k)
        img, _ = render_forward(cloud, cam)
        fmt = query.get("format", ["ppm"])[0]
        if fmt == "png":
            self._send(200, encode_png(img), "image/png")
        elif fmt == "ppm":
            self._send(200, encode_ppm(img), "image/x-portable-pixmap")
        else:
            self._error(400, f"unknown format {fmt!r}")

    def _static(self, path):
        root = self.state.static_dir
        if root is None:
            self._error(404, "not found")
            return
        rel = posixpath.normpath(path.lstrip("/")) or "index.html"
        if rel.startswith(".."):
            self._error(404, "not found")
            return
        full = os.path.join(root, rel)
        if os.path.isdir(full):
            full = os.path.join(full, "index.html")
        if not os.path.isfile(full):
            self._error(404, "not found")
            return
        ext = os.path.splitext(full)[1]
        with open(full, "rb") as fh:
            self._send(200, fh.read(), _CONTENT_TYPES.get(ext, "application/octet-stream"))


def create_server(model, cameras=None, static_dir=None, host="127.0.0.1", port=0):
    handler = type("BoundHandler", (GemRequestHandler,),
                   {"state": _State(model, cameras, static_dir)})
    return ThreadingHTTPServer((host, port), handler)


def serve_forever(server):
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return thread
