import numpy as np
import pytest
from fastapi.testclient import TestClient

from partkit.dictionary import ImageTag, PartDictionary, save_dictionary
from partkit.features import ExtractorSpec, extract_features, get_extractor
from partkit.hierarchy import PartHierarchy, fit_hierarchy
from partkit.service import ServiceSettings, create_app
from partkit.sprites import save_corpus
from partkit.tagging import tag_features


@pytest.fixture(scope="module")
def service_env(tmp_path_factory, sprite_corpus):
    """Sprite corpus on disk + dictionary, shared by the service tests."""
    root = tmp_path_factory.mktemp("service")
    images_dir = root / "images"
    save_corpus(sprite_corpus, images_dir)
    extractor = get_extractor("patch-stats", 64, 4)
    grids = [extract_features(ex.image, extractor, ex.image_id)
             for ex in sprite_corpus]
    hierarchy = fit_hierarchy(grids, 3, 4, seed=11, extractor=extractor.spec)
    tags = {}
    for grid in grids:
        comp, masks = tag_features(grid, hierarchy, (16, 16))
        tags[grid.source_image_id] = ImageTag(comp, masks)
    dict_path = root / "parts.json"
    save_dictionary(PartDictionary(hierarchy, tags), dict_path)
    return {"root": root, "images_dir": images_dir, "dict": dict_path}


def _settings(service_env, tmp_path, **overrides):
    base = dict(
        dictionary_path=str(service_env["dict"]),
        images_dir=str(service_env["images_dir"]),
        state_dir=str(tmp_path / "state"),
        stub=True,
        worker=False,
    )
    base.update(overrides)
    return ServiceSettings(**base)


def _drain(app):
    while app.state.context.process_next():
        pass


def test_health(service_env, tmp_path):
    app = create_app(_settings(service_env, tmp_path))
    with TestClient(app) as client:
        body = client.get("/api/health").json()
    assert body["status"] == "ok"
    assert body["stub"] is True


def test_parts_catalog_filter_and_paging(service_env, tmp_path):
    app = create_app(_settings(service_env, tmp_path))
    with TestClient(app) as client:
        full = client.get("/api/parts", params={"page_size": 100}).json()
        assert full["total"] == 4 * 4  # (M+1) * K
        slot1 = client.get("/api/parts", params={"slot": 1, "page_size": 100}).json()
        assert slot1["total"] == 4
        assert all(e["code"]["slot"] == 1 for e in slot1["entries"])
        bad = client.get("/api/parts", params={"slot": 9})
        assert bad.status_code == 422


def test_catalog_counts_match_reference_scale(tmp_path):
    """A dictionary at the published scale exposes (M+1)*K = 1536 codes."""
    rng = np.random.default_rng(0)
    M, K = 5, 256
    hierarchy = PartHierarchy(
        fg_bg_centroids=rng.normal(size=(2, 4)).astype(np.float32),
        part_centroids=rng.normal(size=(M, 4)).astype(np.float32),
        sub_centroids=rng.normal(size=(M + 1, K, 4)).astype(np.float32),
        M=M, K=K, seed=0, extractor=ExtractorSpec("patch-stats", 64, 4),
    )
    dict_path = tmp_path / "big.json"
    save_dictionary(PartDictionary(hierarchy, {}), dict_path)
    app = create_app(ServiceSettings(dictionary_path=str(dict_path),
                                     state_dir=str(tmp_path / "state"),
                                     stub=True, worker=False))
    with TestClient(app) as client:
        body = client.get("/api/parts", params={"page_size": 10}).json()
        assert body["total"] == (M + 1) * K == 1536
        assert len(body["entries"]) == 10
        # codes unused in the corpus simply have no exemplars
        assert body["entries"][0]["exemplar_image_ids"] == []


def test_no_dictionary_is_conflict(tmp_path):
    app = create_app(ServiceSettings(state_dir=str(tmp_path / "state"),
                                     stub=True, worker=False))
    with TestClient(app) as client:
        assert client.get("/api/parts").status_code == 409


def test_job_lifecycle_with_provenance(service_env, tmp_path):
    app = create_app(_settings(service_env, tmp_path))
    with TestClient(app) as client:
        created = client.post("/api/jobs", json={
            "composition": "0:1,1:2,2:3,3:4", "seed": 5}).json()
        assert created["status"] == "queued"
        fetched = client.get(f"/api/jobs/{created['id']}").json()
        assert fetched["status"] in ("queued", "running")

        _drain(app)
        done = client.get(f"/api/jobs/{created['id']}").json()
        assert done["status"] == "done"
        assert done["result_ref"]
        assert done["provenance"]["composition"] == "0:1,1:2,2:3,3:4"
        assert done["provenance"]["seed"] == 5

        image = client.get(f"/api/images/{done['result_ref']}")
        assert image.status_code == 200
        assert image.headers["content-type"] == "image/png"
        assert "immutable" in image.headers["cache-control"]


def test_unknown_ids_are_404(service_env, tmp_path):
    app = create_app(_settings(service_env, tmp_path))
    with TestClient(app) as client:
        assert client.get("/api/jobs/nope").status_code == 404
        assert client.get("/api/images/img-nope").status_code == 404


def test_invalid_composition_lists_offenders(service_env, tmp_path):
    app = create_app(_settings(service_env, tmp_path))
    with TestClient(app) as client:
        resp = client.post("/api/jobs", json={"composition": "0:1,1:2,2:3,3:9"})
        assert resp.status_code == 422
        assert "(3,9)" in resp.json()["detail"]
        resp = client.post("/api/jobs", json={"composition": "garbage"})
        assert resp.status_code == 422
        resp = client.post("/api/jobs", json={})
        assert resp.status_code == 422


def test_jobs_survive_restart(service_env, tmp_path):
    settings = _settings(service_env, tmp_path)
    app = create_app(settings)
    with TestClient(app) as client:
        job_id = client.post("/api/jobs", json={
            "composition": "0:1,1:1,2:1,3:1"}).json()["id"]

    # a fresh app over the same state dir still knows the job
    app2 = create_app(settings)
    with TestClient(app2) as client:
        body = client.get(f"/api/jobs/{job_id}").json()
        assert body["status"] == "queued"
        _drain(app2)
        assert client.get(f"/api/jobs/{job_id}").json()["status"] == "done"

    # and a third restart still serves the finished image + provenance
    app3 = create_app(settings)
    with TestClient(app3) as client:
        body = client.get(f"/api/jobs/{job_id}").json()
        assert body["status"] == "done"
        assert client.get(f"/api/images/{body['result_ref']}").status_code == 200
        assert body["provenance"]["composition"] == "0:1,1:1,2:1,3:1"


def test_fifo_order(service_env, tmp_path):
    app = create_app(_settings(service_env, tmp_path))
    with TestClient(app) as client:
        ids = [client.post("/api/jobs", json={
            "composition": "0:1,1:1,2:1,3:1", "seed": i}).json()["id"]
            for i in range(3)]
        context = app.state.context
        context.process_next()
        statuses = [client.get(f"/api/jobs/{i}").json()["status"] for i in ids]
        assert statuses == ["done", "queued", "queued"]


def test_exemplar_thumbnails_served(service_env, tmp_path):
    app = create_app(_settings(service_env, tmp_path))
    with TestClient(app) as client:
        parts = client.get("/api/parts", params={"slot": 1, "page_size": 10}).json()
        with_exemplars = [e for e in parts["entries"] if e["exemplar_image_ids"]]
        assert with_exemplars, "expected at least one populated variant"
        thumb_id = with_exemplars[0]["exemplar_image_ids"][0]
        resp = client.get(f"/api/images/{thumb_id}")
        assert resp.status_code == 200
        assert resp.headers["content-type"] == "image/png"


def test_stub_jobs_are_deterministic(service_env, tmp_path):
    app = create_app(_settings(service_env, tmp_path))
    with TestClient(app) as client:
        req = {"composition": "0:2,1:1,2:4,3:3", "seed": 9}
        first = client.post("/api/jobs", json=req).json()["id"]
        second = client.post("/api/jobs", json=req).json()["id"]
        _drain(app)
        img_a = client.get(
            f"/api/images/{client.get(f'/api/jobs/{first}').json()['result_ref']}")
        img_b = client.get(
            f"/api/images/{client.get(f'/api/jobs/{second}').json()['result_ref']}")
        assert img_a.content == img_b.content
