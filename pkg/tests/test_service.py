import base64
import concurrent.futures
import dataclasses

import numpy as np
import pytest
import torch
from fastapi.testclient import TestClient
from hypothesis import given, settings
from hypothesis import strategies as st

from facialgan import service
from facialgan.checkpoint import segmenter_checksum
from facialgan.data import build_index, decode_image, encode_image
from facialgan.errors import BadMask, DecodeError, MissingReference
from facialgan.service import (ModelService, SampleCatalog, SynthesisRequest,
                               build_app, grid_from_b64, grid_to_b64,
                               image_from_b64, image_to_b64)
from facialgan.training import train_facialgan, train_segmenter


@pytest.fixture(scope="module")
def weights_ckpt(toy_root_16, tmp_path_factory, tiny_train_config):
    tmp = tmp_path_factory.mktemp("svc")
    train_segmenter(tiny_train_config, toy_root_16, out_path=tmp / "seg.ckpt",
                    split="all", val_split="all")
    cfg = dataclasses.replace(tiny_train_config, total_iters=3)
    result = train_facialgan(cfg, toy_root_16, tmp / "seg.ckpt", tmp / "run")
    return result.weights_checkpoint


@pytest.fixture(scope="module")
def model_service(weights_ckpt):
    return ModelService.from_path(weights_ckpt)


@pytest.fixture(scope="module")
def client(model_service, toy_root_16):
    catalog = SampleCatalog(index=build_index(toy_root_16, "all"),
                            image_size=model_service.image_size)
    app = build_app(model_service, samples=catalog)
    return TestClient(app, raise_server_exceptions=False)


def source_b64(toy_root, i=0):
    rec = build_index(toy_root, "all").records[i]
    return base64.b64encode(rec.image_path.read_bytes()).decode("ascii")


class TestWireCodecs:
    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=40, deadline=None)
    def test_grid_roundtrip_lossless(self, seed):
        rng = np.random.default_rng(seed)
        grid = rng.integers(0, 5, size=rng.integers(2, 24, size=2)).astype(np.uint8)
        assert np.array_equal(grid_from_b64(grid_to_b64(grid)), grid)

    def test_image_roundtrip_exact_uint8(self):
        rng = np.random.default_rng(0)
        arr = rng.integers(0, 256, size=(11, 7, 3)).astype(np.uint8)
        x = service.image_to_tensor(arr)
        back = decode_image(base64.b64decode(image_to_b64(x)))
        assert np.array_equal(back, arr)

    def test_bad_base64_raises(self):
        with pytest.raises(DecodeError):
            image_from_b64("!!!not base64!!!")
        with pytest.raises(BadMask):
            grid_from_b64("!!!not base64!!!")

    def test_rgb_png_rejected_as_mask(self):
        rgb = encode_image(np.zeros((4, 4, 3), dtype=np.uint8))
        with pytest.raises(BadMask):
            grid_from_b64(base64.b64encode(rgb).decode("ascii"))


class TestSynthesize:
    def test_deterministic_png_bytes(self, model_service, toy_root_16):
        req = SynthesisRequest(source=source_b64(toy_root_16), mode="latent",
                               domain="female", seed=5)
        r1 = model_service.synthesize(req)
        r2 = model_service.synthesize(req)
        assert image_to_b64(r1.image) == image_to_b64(r2.image)
        assert torch.equal(r1.predicted_mask, r2.predicted_mask)

    def test_seed_changes_output(self, model_service, toy_root_16):
        req5 = SynthesisRequest(source=source_b64(toy_root_16), seed=5)
        req6 = SynthesisRequest(source=source_b64(toy_root_16), seed=6)
        assert image_to_b64(model_service.synthesize(req5).image) != \
            image_to_b64(model_service.synthesize(req6).image)

    def test_missing_reference(self, model_service, toy_root_16):
        req = SynthesisRequest(source=source_b64(toy_root_16), mode="reference")
        with pytest.raises(MissingReference):
            model_service.synthesize(req)

    def test_reference_mode(self, model_service, toy_root_16):
        req = SynthesisRequest(source=source_b64(toy_root_16), mode="reference",
                               reference=source_b64(toy_root_16, i=1), domain="male")
        result = model_service.synthesize(req)
        assert result.image.shape == (3, 16, 16)
        assert result.predicted_mask.shape == (5, 16, 16)

    def test_edited_mask_accepted(self, model_service, toy_root_16):
        parse = model_service.segment(image_from_b64(source_b64(toy_root_16)))
        grid = parse.argmax(dim=0).numpy().astype(np.uint8)
        grid[0:4, 0:4] = 4  # paint a mouth blob
        req = SynthesisRequest(source=source_b64(toy_root_16),
                               mask=grid_to_b64(grid), seed=1)
        result = model_service.synthesize(req)
        assert result.image.shape == (3, 16, 16)

    def test_bad_mask_values(self, model_service, toy_root_16):
        grid = np.full((16, 16), 9, dtype=np.uint8)
        req = SynthesisRequest(source=source_b64(toy_root_16), mask=grid_to_b64(grid))
        with pytest.raises(BadMask):
            model_service.synthesize(req)

    def test_segment_output_one_hot(self, model_service, toy_root_16):
        mask = model_service.segment(image_from_b64(source_b64(toy_root_16)))
        assert torch.equal(mask.sum(dim=0), torch.ones(16, 16))
        assert set(mask.unique().tolist()) <= {0.0, 1.0}


class TestHttpApi:
    def test_health(self, client):
        r = client.get("/api/health")
        assert r.status_code == 200
        body = r.json()
        assert body["status"] == "ok" and "iteration" in body

    def test_samples_listing_and_fetch(self, client):
        listing = client.get("/api/samples").json()["samples"]
        assert listing and {"id", "thumbnail"} <= set(listing[0])
        sample = client.get(f"/api/samples/{listing[0]['id']}").json()
        assert {"id", "image", "mask"} <= set(sample)
        grid = grid_from_b64(sample["mask"])
        assert grid.max() <= 4

    def test_sample_not_found(self, client):
        r = client.get("/api/samples/zzz")
        assert r.status_code == 404
        assert r.json()["code"] == "not_found" and "message" in r.json()

    def test_segment_endpoint(self, client, toy_root_16):
        r = client.post("/api/segment", json={"image": source_b64(toy_root_16)})
        assert r.status_code == 200
        grid = grid_from_b64(r.json()["mask"])
        assert grid.shape == (16, 16)

    def test_synthesize_endpoint(self, client, toy_root_16):
        r = client.post("/api/synthesize", json={
            "source": source_b64(toy_root_16), "mode": "latent",
            "domain": "male", "seed": 3})
        assert r.status_code == 200
        body = r.json()
        assert {"image", "predicted_mask", "timing_ms"} <= set(body)
        decode_image(base64.b64decode(body["image"]))

    def test_invalid_base64_gives_400_with_code(self, client):
        r = client.post("/api/synthesize", json={"source": "@@@"})
        assert r.status_code == 400
        body = r.json()
        assert body["code"] == "bad_image" and "message" in body

    def test_missing_reference_code(self, client, toy_root_16):
        r = client.post("/api/synthesize", json={
            "source": source_b64(toy_root_16), "mode": "reference"})
        assert r.status_code == 400
        assert r.json()["code"] == "missing_reference"

    def test_unknown_field_rejected(self, client, toy_root_16):
        r = client.post("/api/synthesize", json={
            "source": source_b64(toy_root_16), "surprise": 1})
        assert r.status_code == 400
        assert r.json()["code"] == "invalid_request"

    def test_missing_image_field_on_segment(self, client):
        r = client.post("/api/segment", json={})
        assert r.status_code == 400
        assert r.json()["code"] == "invalid_request"

    def test_concurrent_identical_requests_identical_bodies(self, client, toy_root_16):
        payload = {"source": source_b64(toy_root_16), "mode": "latent",
                   "domain": "female", "seed": 9}
        def call():
            return client.post("/api/synthesize", json=payload).json()
        with concurrent.futures.ThreadPoolExecutor(max_workers=4) as pool:
            bodies = list(pool.map(lambda _: call(), range(4)))
        for body in bodies[1:]:
            assert body["image"] == bodies[0]["image"]
            assert body["predicted_mask"] == bodies[0]["predicted_mask"]

    def test_serving_never_mutates_weights(self, model_service, client, toy_root_16):
        before = segmenter_checksum(model_service.nets.segmenter)
        g_before = [p.clone() for p in model_service.nets.generator.parameters()]
        for seed in range(3):
            client.post("/api/synthesize", json={"source": source_b64(toy_root_16),
                                                 "seed": seed})
        client.post("/api/segment", json={"image": source_b64(toy_root_16)})
        assert segmenter_checksum(model_service.nets.segmenter) == before
        for p, q in zip(model_service.nets.generator.parameters(), g_before):
            assert torch.equal(p, q)


class TestGenerateCli:
    def test_generate_identical_png_bytes(self, weights_ckpt, toy_root_16, tmp_path):
        from click.testing import CliRunner
        from facialgan.cli import main
        rec = build_index(toy_root_16, "all").records[0]
        runner = CliRunner()
        outs = []
        for name in ("a.png", "b.png"):
            out = tmp_path / name
            res = runner.invoke(main, [
                "generate", "--ckpt", str(weights_ckpt), "--source", str(rec.image_path),
                "--mode", "latent", "--domain", "male", "--seed", "11",
                "--out", str(out)])
            assert res.exit_code == 0, res.output
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]

    def test_single_flight_app(self, model_service, toy_root_16):
        app = build_app(model_service, single_flight=True)
        with TestClient(app) as c:
            r = c.post("/api/synthesize", json={"source": source_b64(toy_root_16)})
            assert r.status_code == 200
