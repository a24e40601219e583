import hashlib
import http.server
import math
import threading

import numpy as np
import pytest

from planetex.compose import NO_SOURCE, TextureMap
from planetex.errors import GeometryError, InpaintBackendError
from planetex.inpaint import (INPAINTED, MU_RANGE, SIGMA_RANGE, ExternalBackend, decode_request,
                              default_part_count, encode_request, fill_along_directions, init_multinoise,
                              inpaint, partition_mask, principal_directions, resize_for_inpaint, restore_size)


def texture(raster, observed):
    observed = np.asarray(observed, bool)
    return TextureMap(np.where(observed[..., None], raster, 0.0), observed,
                      np.where(observed, 0, NO_SOURCE))


# --- principal directions ------------------------------------------------------

def test_directions_horizontal():
    d1, d2 = principal_directions([[0, 0, 10, 0], [5, 3, 0, 3]])
    assert d1.tolist() == [1.0, 0.0] and d2.tolist() == [0.0, 1.0]


def test_directions_diagonal():
    d1, _ = principal_directions([[0, 0, 10, 10], [3, 0, 13, 10]])
    assert np.allclose(d1, [math.sqrt(0.5), math.sqrt(0.5)])


def test_directions_weighted_mixture(rng):
    lines = []
    for _ in range(7):
        lines.append([0, 0, 10, rng.normal(0, 0.3)])
    for _ in range(3):
        lines.append([0, 0, rng.normal(0, 0.3), 10])
    d1, _ = principal_directions(lines)
    # oracle: weighted covariance of doubled-angle unit vectors
    emb = []
    for x1, y1, x2, y2 in lines:
        a = math.atan2(y2 - y1, x2 - x1)
        emb.append(math.hypot(x2 - x1, y2 - y1) * np.array([math.cos(2 * a), math.sin(2 * a)]))
    m = np.sum(emb, axis=0)
    a1 = 0.5 * math.atan2(m[1], m[0])
    assert abs(math.degrees(math.atan2(d1[1], d1[0])) - math.degrees(a1)) < 1e-6
    assert abs(math.degrees(math.atan2(d1[1], d1[0]))) < 5


def test_directions_empty_is_error():
    with pytest.raises(GeometryError):
        principal_directions([])


# --- partition ------------------------------------------------------------------

def _check_partition(mask, part):
    total = np.zeros(mask.shape, int)
    for p in part.parts:
        total += p
    assert total.max() <= 1 and np.array_equal(total.astype(bool), mask)


def test_partition_solid_square():
    mask = np.ones((100, 100), bool)
    part = partition_mask(mask, (0.0, 1.0), 4)
    _check_partition(mask, part)
    assert len(part.parts) == 4
    for k, p in enumerate(part.parts):
        rows = np.flatnonzero(p.any(axis=1))
        assert rows.tolist() == list(range(25 * k, 25 * k + 25)) and p[rows].all()


def test_partition_single_pixel():
    mask = np.zeros((5, 5), bool)
    mask[2, 3] = True
    part = partition_mask(mask, (0.0, 1.0), 3)
    assert len(part.parts) == 1 and part.dropped == 2


def test_partition_l_shape_matches_bucketing():
    mask = np.zeros((40, 40), bool)
    mask[5:35, 5:12] = True
    mask[28:35, 5:35] = True
    d2 = np.array([-math.sin(0.3), math.cos(0.3)])
    part = partition_mask(mask, d2, 3)
    _check_partition(mask, part)
    ys, xs = np.nonzero(mask)
    proj = [x * d2[0] + y * d2[1] for y, x in zip(ys, xs)]
    lo, hi = min(proj), max(proj)
    for (y, x), p in zip(zip(ys, xs), proj):
        k = min(int((p - lo) / (hi - lo) * 3), 2)
        assert part.parts[k][y, x]


def test_partition_random_masks(rng):
    for _ in range(20):
        mask = rng.random((30, 40)) < rng.uniform(0.05, 0.9)
        if not mask.any():
            continue
        a = rng.uniform(0, math.pi)
        part = partition_mask(mask, (math.cos(a), math.sin(a)), int(rng.integers(1, 9)))
        _check_partition(mask, part)


# --- noise -------------------------------------------------------------------------

def test_noise_deterministic_and_in_range():
    mask = np.ones((60, 60), bool)
    part = partition_mask(mask, (0.0, 1.0), 5)
    a, sa = init_multinoise(part, 42)
    b, sb = init_multinoise(part, 42)
    c, _ = init_multinoise(part, 43)
    assert a.tobytes() == b.tobytes() and sa == sb
    assert hashlib.sha256(a.tobytes()).digest() != hashlib.sha256(c.tobytes()).digest()
    for mu, sigma in sa.params:
        assert MU_RANGE[0] <= mu <= MU_RANGE[1] and SIGMA_RANGE[0] <= sigma <= SIGMA_RANGE[1]


def test_noise_part_means_within_standard_error():
    mask = np.ones((80, 80), bool)
    part = partition_mask(mask, (0.0, 1.0), 4)
    for seed in range(10):
        noise, spec = init_multinoise(part, seed)
        for p, (mu, sigma) in zip(part.parts, spec.params):
            n = int(p.sum())
            assert abs(noise[p].mean() - mu) <= 4 * sigma / math.sqrt(n)


# --- resizing ------------------------------------------------------------------------

def test_resize_examples(rng):
    big = rng.random((1024, 1024, 3))
    r, rec = resize_for_inpaint(big)
    assert r.shape == (512, 512, 3) and restore_size(r, rec).shape == big.shape
    same = rng.random((512, 512))
    r, rec = resize_for_inpaint(same)
    assert np.array_equal(r, same)
    r, rec = resize_for_inpaint(rng.random((400, 800, 3)), large_mask=True)
    assert rec.content == (256, 512) and rec.padded and r.shape == (512, 512, 3)
    assert not r[256:].any()
    assert restore_size(r, rec).shape == (400, 800, 3)


def test_resize_restores_ramp():
    yy, xx = np.mgrid[:300, :700]
    ramp = 0.1 + 0.8 * (xx / 699) * 0.5 + 0.4 * (yy / 299) * 0.5
    for large in (False, True):
        r, rec = resize_for_inpaint(ramp, large)
        assert np.abs(restore_size(r, rec) - ramp).max() <= 1 / 255


# --- builtin inpainting -----------------------------------------------------------------

def _stripes(h=60, w=80):
    rows = np.arange(h)[:, None]
    colors = np.array([[0.9, 0.2, 0.2], [0.2, 0.8, 0.3], [0.1, 0.2, 0.9]])
    return np.broadcast_to(colors[(rows // 5) % 3], (h, w, 3)).copy()


def test_empty_mask_unchanged(rng):
    t = texture(rng.random((20, 20, 3)), np.ones((20, 20), bool))
    out, info = inpaint(t, [])
    assert np.array_equal(out.raster, t.raster) and info.masked_pixels == 0


def test_stripes_continue_through_hole():
    img = _stripes()
    observed = np.ones(img.shape[:2], bool)
    observed[20:40, 30:55] = False
    t = texture(img, observed)
    lol2 = [[0, y, 79, y] for y in range(5, 60, 5)]
    raw, _ = inpaint(t, lol2, harmonize=False)
    assert np.abs(raw.raster - img).max() <= 1 / 255
    out, info = inpaint(t, lol2)
    assert np.abs(out.raster - img).max() <= 1e-9
    assert np.array_equal(out.raster[observed], t.raster[observed])
    assert out.observed.all() and (out.provenance[~observed] == INPAINTED).all()
    assert np.allclose(info.d1, [1, 0])


def test_fill_prefers_first_direction():
    raster = np.zeros((5, 9, 3))
    known = np.ones((5, 9), bool)
    known[2, 3:6] = False
    raster[2, :3] = 0.25
    raster[2, 6:] = 0.25
    raster[:2, 3:6] = 1.0
    raster[3:, 3:6] = 1.0
    out = fill_along_directions(raster, known, ~known, (1.0, 0.0), (0.0, 1.0))
    assert np.all(out[2, 3:6] == 0.25)


def test_inpaint_is_deterministic(rng):
    img = rng.random((40, 40, 3))
    observed = rng.random((40, 40)) > 0.3
    t = texture(img, observed)
    a, _ = inpaint(t, [[0, 0, 39, 0]], seed=5)
    b, _ = inpaint(t, [[0, 0, 39, 0]], seed=5)
    assert a.raster.tobytes() == b.raster.tobytes()
    assert np.array_equal(a.raster[observed], t.raster[observed])


def test_default_part_count_clamps():
    mask = np.ones((100, 50), bool)
    lines = [[0, y, 49, y] for y in range(0, 100, 10)]
    assert default_part_count(mask, lines, np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 8
    assert default_part_count(mask, [], np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 2


# --- external backend ------------------------------------------------------------------

def test_wire_round_trip(rng):
    img = rng.random((16, 16, 3))
    mask = rng.random((16, 16)) > 0.5
    noise = rng.normal(5, 20, (16, 16))
    req = decode_request(encode_request(img, mask, noise, [[0, 0, 1, 1]], 9))
    assert np.abs(req["image"] - img).max() <= 0.5 / 255 + 1e-12
    assert np.array_equal(req["mask"], mask)
    assert np.abs(req["noise"] - noise).max() <= 0.5 / 64 + 1e-12
    assert req["lol2"] == [[0, 0, 1, 1]] and req["meta"]["seed"] == 9


class _Echo(http.server.BaseHTTPRequestHandler):
    def do_POST(self):
        import io

        from PIL import Image

        body = self.rfile.read(int(self.headers["Content-Length"]))
        if self.path == "/garbage":
            data = b"not a png"
        else:
            req = decode_request(body)
            buf = io.BytesIO()
            Image.fromarray(np.rint(req["image"] * 255).astype(np.uint8)).save(buf, format="PNG")
            data = buf.getvalue()
        self.send_response(200)
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture
def echo_server():
    srv = http.server.HTTPServer(("127.0.0.1", 0), _Echo)
    th = threading.Thread(target=srv.serve_forever, daemon=True)
    th.start()
    yield f"http://127.0.0.1:{srv.server_address[1]}"
    srv.shutdown()


def test_echo_backend(echo_server):
    rng = np.random.default_rng(0)
    img = np.rint(rng.random((512, 512, 3)) * 255) / 255
    observed = np.ones((512, 512), bool)
    observed[100:200, 300:420] = False
    t = texture(img, observed)
    out, info = inpaint(t, [[0, 0, 511, 0]], backend=ExternalBackend(echo_server + "/"))
    assert info.backend == "external"
    assert np.all(out.raster[~observed] == 0)
    assert np.array_equal(out.raster[observed], t.raster[observed])


def test_backend_errors(echo_server):
    t = texture(np.zeros((512, 512, 3)), np.arange(512)[None, :].repeat(512, 0) < 300)
    with pytest.raises(InpaintBackendError, match="malformed"):
        inpaint(t, [], backend=ExternalBackend(echo_server + "/garbage"))
    with pytest.raises(InpaintBackendError, match="builtin"):
        inpaint(t, [], backend=ExternalBackend("http://127.0.0.1:9/", timeout=2))
