import numpy as np
import pytest
from fastapi.testclient import TestClient

from phantoms import random_blob_phantom, transformed_pair
from volkey.match import SimilarityTransform7DOF
from volkey.service import create_app
from volkey.volume import save_raw


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app())


@pytest.fixture(scope="module")
def volume_path(tmp_path_factory):
    rng = np.random.default_rng(77)
    vol = random_blob_phantom((40, 40, 40), rng, n_blobs=8, margin=8)
    base = tmp_path_factory.mktemp("vols") / "phantom"
    data_path, _ = save_raw(vol, base)
    return data_path


def small_config(**overrides):
    cfg = {"num_octaves": 2}
    cfg.update(overrides)
    return cfg


class TestHealth:
    def test_healthz(self, client):
        body = client.get("/healthz").json()
        assert body["status"] == "ok"

    def test_defaults(self, client):
        body = client.get("/defaults").json()
        assert body["base_sigma"] == 1.6
        assert body["descriptor"] == "siftrank"


class TestExtractEndpoint:
    def test_extract_writes_files(self, client, volume_path, tmp_path):
        prefix = str(tmp_path / "out")
        response = client.post(
            "/extract",
            json={
                "volume": {"path": volume_path},
                "config": small_config(),
                "output_prefix": prefix,
            },
        )
        assert response.status_code == 200
        body = response.json()
        assert body["keypoint_count"] > 0
        assert body["descriptor_count"] > 0
        assert body["stage_micros"]["convolution"] > 0
        header = open(body["keypoints_path"]).readline().strip()
        assert header == "# volkey keypoints v1"
        header = open(body["descriptors_path"]).readline()
        assert header.startswith("# volkey descriptors v1 kind=siftrank n=64")

    def test_constant_volume_zero_keypoints(self, client, tmp_path):
        from volkey.volume import Volume

        data_path, _ = save_raw(Volume(np.full((24, 24, 24), 3.0, dtype=np.float32)), tmp_path / "c")
        body = client.post(
            "/extract", json={"volume": {"path": data_path}, "config": small_config()}
        ).json()
        assert body["keypoint_count"] == 0

    def test_missing_file_maps_to_io_error(self, client):
        response = client.post("/extract", json={"volume": {"path": "/nonexistent.f32"}})
        assert response.status_code == 400
        assert response.json()["kind"] in ("io", "format")

    def test_bad_config_rejected(self, client, volume_path):
        response = client.post(
            "/extract",
            json={"volume": {"path": volume_path}, "config": {"descriptor": "orb"}},
        )
        assert response.status_code == 422  # pydantic validation

    def test_dump_pyramid(self, client, volume_path, tmp_path):
        dump_dir = tmp_path / "pyr"
        client.post(
            "/extract",
            json={
                "volume": {"path": volume_path},
                "config": small_config(),
                "dump_pyramid_dir": str(dump_dir),
            },
        )
        names = sorted(p.name for p in dump_dir.glob("*.f32"))
        assert names and names[0].startswith("oct0_lvl0_sigma")


@pytest.fixture(scope="module")
def desc_files(client, tmp_path_factory):
    rng = np.random.default_rng(31)
    truth = SimilarityTransform7DOF(1.0, np.eye(3), np.array([3.0, -2.0, 1.0]))
    a, b = transformed_pair((48, 48, 48), rng, truth, noise=0.003)
    base = tmp_path_factory.mktemp("match")
    paths = {}
    for name, vol in (("a", a), ("b", b)):
        data_path, _ = save_raw(vol, base / name)
        prefix = str(base / f"{name}_out")
        client.post(
            "/extract",
            json={
                "volume": {"path": data_path},
                "config": small_config(descriptor="rrief"),
                "output_prefix": prefix,
            },
        )
        paths[name] = prefix + ".desc.txt"
    return paths, truth


class TestMatchEndpoint:
    def test_self_match_identity(self, client, desc_files):
        paths, _ = desc_files
        body = client.post(
            "/match",
            json={"descriptors_a": paths["a"], "descriptors_b": paths["a"], "config": small_config()},
        ).json()
        assert body["kind"] == "rrief"
        assert body["inlier_count"] > 0
        assert body["consensus"]["scale"] == pytest.approx(1.0, abs=0.02)
        rot = np.array(body["consensus"]["rotation"]).reshape(3, 3)
        assert np.allclose(rot, np.eye(3), atol=0.02)

    def test_known_translation_recovered(self, client, desc_files, tmp_path):
        paths, truth = desc_files
        csv_path = str(tmp_path / "inl.csv")
        body = client.post(
            "/match",
            json={
                "descriptors_a": paths["a"],
                "descriptors_b": paths["b"],
                "config": small_config(),
                "inlier_csv": csv_path,
            },
        ).json()
        assert np.allclose(body["consensus"]["translation"], truth.translation, atol=1.5)
        assert open(csv_path).readline().strip() == "idx_a,idx_b,distance"

    def test_kind_mismatch_rejected(self, client, desc_files, tmp_path):
        paths, _ = desc_files
        other = str(tmp_path / "brief.desc.txt")
        with open(paths["a"]) as fh:
            lines = fh.read().splitlines()
        with open(other, "w") as fh:
            fh.write("# volkey descriptors v1 kind=brief n=64 seed=13\n")
        response = client.post(
            "/match", json={"descriptors_a": paths["a"], "descriptors_b": other}
        )
        assert response.status_code == 400
        assert response.json()["kind"] == "parameter"


class TestBenchEndpoint:
    def test_rows_and_sweep(self, client, volume_path, tmp_path):
        csv_path = str(tmp_path / "bench.csv")
        body = client.post(
            "/bench",
            json={
                "volume": {"path": volume_path},
                "config": small_config(),
                "repeats": 1,
                "workers": [1, 2],
                "chunks": [5, 10],
                "csv_path": csv_path,
            },
        ).json()
        assert set(body["totals_by_workers"]) == {"1", "2"}
        assert len(body["sweep"]) == 2
        assert body["fastest_chunk"] in (5, 10)
        lines = open(csv_path).read().splitlines()
        assert lines[0] == "stage,octave,level,workers,chunk,wall_micros"
        assert len(lines) > 1
