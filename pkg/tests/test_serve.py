import json
import threading
import urllib.error
import urllib.request

import numpy as np
import pytest

from conftest import random_cloud
from gemsplat.core import GaussianCloud, orbit_camera
from gemsplat.eigenmodel import CoefficientVector, distill, evaluate, serialize
from gemsplat.images import encode_ppm
from gemsplat.renderer import render_forward
from gemsplat.serve import create_server


@pytest.fixture(scope="module")
def served():
    rng = np.random.default_rng(42)
    base = random_cloud(rng, 9)
    clouds = []
    for _ in range(8):
        c = base.copy()
        c.positions = c.positions + rng.normal(scale=0.05, size=(9, 3))
        clouds.append(GaussianCloud(c.positions, c.rotations, c.log_scales,
                                    c.opacity_logits, c.colors))
    model = distill(clouds, 3, 3, 3, np.ones((3, 3), dtype=bool))
    cameras = [orbit_camera(24, 24, 45.0, 0.1 * i, 0.1, 3.0) for i in range(2)]
    server = create_server(model, cameras)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    port = server.server_address[1]
    yield model, cameras, f"http://127.0.0.1:{port}"
    server.shutdown()


def fetch(url):
    with urllib.request.urlopen(url, timeout=10) as resp:
        return resp.status, resp.read(), resp.headers.get("Content-Type")


class TestEndpoints:
    def test_model_bytes(self, served):
        model, _, base = served
        status, body, _ = fetch(base + "/model")
        assert status == 200
        assert body == serialize(model)

    def test_meta(self, served):
        model, _, base = served
        status, body, ctype = fetch(base + "/meta")
        assert status == 200 and ctype == "application/json"
        meta = json.loads(body)
        assert meta["texWidth"] == 3 and meta["T"] == 9
        assert meta["M"]["position"] == model.bases["position"].components
        assert len(meta["stddevs"]["position"]) == meta["M"]["position"]

    def test_cameras_listing(self, served):
        _, cameras, base = served
        _, body, _ = fetch(base + "/cameras")
        data = json.loads(body)
        assert len(data) == len(cameras)
        assert data[0]["width"] == 24

    def test_render_zero_matches_direct_path(self, served):
        model, cameras, base = served
        status, body, ctype = fetch(base + "/render?k=0&cam=0&format=ppm")
        assert status == 200 and "portable" in ctype
        cloud = evaluate(model, CoefficientVector.zeros_for(model))
        img, _ = render_forward(cloud, cameras[0])
        assert body == encode_ppm(img)

    def test_render_with_coefficients(self, served):
        model, cameras, base = served
        k = CoefficientVector.zeros_for(model)
        k.position[0] = 0.05
        kstr = ",".join(str(v) for v in k.concat())
        status, body, _ = fetch(base + f"/render?k={kstr}&cam=0&format=ppm")
        assert status == 200
        img, _ = render_forward(evaluate(model, k), cameras[0])
        assert body == encode_ppm(img)

    def test_render_orbit_camera(self, served):
        model, _, base = served
        status, body, _ = fetch(base + "/render?az=0.2&el=0.1&dist=3.5&size=20&format=ppm")
        assert status == 200
        cam = orbit_camera(20, 20, 45.0, 0.2, 0.1, 3.5)
        img, _ = render_forward(evaluate(model, CoefficientVector.zeros_for(model)), cam)
        assert body == encode_ppm(img)

    def test_render_png(self, served):
        _, _, base = served
        status, body, ctype = fetch(base + "/render?k=0&cam=0&format=png")
        assert status == 200 and ctype == "image/png"
        assert body.startswith(b"\x89PNG")

    def test_malformed_k_is_400(self, served):
        _, _, base = served
        with pytest.raises(urllib.error.HTTPError) as err:
            fetch(base + "/render?k=banana&cam=0")
        assert err.value.code == 400

    def test_wrong_k_length_is_400(self, served):
        _, _, base = served
        with pytest.raises(urllib.error.HTTPError) as err:
            fetch(base + "/render?k=1,2&cam=0")
        assert err.value.code == 400

    def test_bad_camera_index_is_400(self, served):
        _, _, base = served
        with pytest.raises(urllib.error.HTTPError) as err:
            fetch(base + "/render?k=0&cam=99")
        assert err.value.code == 400

    def test_unknown_path_is_404(self, served):
        _, _, base = served
        with pytest.raises(urllib.error.HTTPError) as err:
            fetch(base + "/definitely-not-here")
        assert err.value.code == 404

    def test_concurrent_fetches_identical(self, served):
        model, _, base = served
        results = [None] * 16
        expected = serialize(model)

        def grab(i):
            _, body, _ = fetch(base + "/model")
            results[i] = body

        threads = [threading.Thread(target=grab, args=(i,)) for i in range(16)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert all(r == expected for r in results)


def test_static_file_hosting(tmp_path):
    rng = np.random.default_rng(1)
    clouds = [random_cloud(rng, 4) for _ in range(4)]
    model = distill(clouds, 2, 2, 2, np.ones((2, 2), dtype=bool))
    (tmp_path / "index.html").write_text("<html>viewer</html>")
    (tmp_path / "app.js").write_text("console.log('hi')")
    server = create_server(model, [], static_dir=str(tmp_path))
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    base = f"http://127.0.0.1:{server.server_address[1]}"
    try:
        status, body, ctype = fetch(base + "/")
        assert status == 200 and b"viewer" in body and ctype == "text/html"
        status, body, ctype = fetch(base + "/app.js")
        assert status == 200 and ctype == "text/javascript"
        with pytest.raises(urllib.error.HTTPError):
            fetch(base + "/../secret")
    finally:
        server.shutdown()
