import io
import json
import threading
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

import ivseg.service as service_mod
from ivseg.data import ToyVideoSpec, generate_toy_video
from ivseg.masks import frame_to_png
from ivseg.scribbles import Scribble, ScribbleSet
from ivseg.service import create_app


@pytest.fixture(scope="module")
def toy_pngs():
    frames, gts = generate_toy_video(ToyVideoSpec(num_frames=4, h=64, w=64), 8)
    return [frame_to_png(f) for f in frames]


@pytest.fixture()
def client(tiny_model, tmp_path):
    app = create_app(tiny_model, tmp_path / "data")
    with TestClient(app) as c:
        yield c


def _upload(client, pngs, num_objects=1):
    files = [("frames", (f"{i:05d}.png", data, "image/png")) for i, data in enumerate(pngs)]
    return client.post("/sessions", files=files, data={"num_objects": str(num_objects)})


def _scribble_json(frame=1, object_id=1):
    return ScribbleSet(frame, [Scribble([(0.4, 0.5), (0.6, 0.5)], object_id, "pos")]).to_json()


class TestHealth:
    def test_healthz(self, client):
        r = client.get("/healthz")
        assert r.status_code == 200
        assert r.json()["status"] == "ok"


class TestCreateSession:
    def test_upload_happy_path(self, client, toy_pngs):
        r = _upload(client, toy_pngs, num_objects=2)
        assert r.status_code == 201
        body = r.json()
        assert body["state"] == "idle"
        assert body["num_frames"] == 4
        assert body["num_objects"] == 2

    def test_empty_upload_rejected(self, client):
        r = client.post("/sessions", data={"num_objects": "1"})
        assert r.status_code == 400

    def test_mixed_sizes_rejected(self, client, toy_pngs):
        small = generate_toy_video(
            ToyVideoSpec(num_frames=1, h=32, w=32, motion_amplitude=1.0), 0
        )[0][0]
        mixed = toy_pngs[:2] + [frame_to_png(small)]
        r = _upload(client, mixed)
        assert r.status_code == 422

    def test_missing_dataset_path(self, client):
        r = client.post("/sessions", json={"dataset_path": "/nonexistent/path", "num_objects": 1})
        assert r.status_code == 404

    def test_dataset_path_mode(self, client, tmp_path, toy_pngs):
        video = tmp_path / "video"
        video.mkdir()
        for i, data in enumerate(toy_pngs):
            (video / f"{i:05d}.png").write_bytes(data)
        r = client.post("/sessions", json={"dataset_path": str(video), "num_objects": 1})
        assert r.status_code == 201
        assert r.json()["num_frames"] == 4


class TestRounds:
    def test_submit_and_retrieve(self, client, toy_pngs):
        sid = _upload(client, toy_pngs).json()["session_id"]
        r = client.post(f"/sessions/{sid}/scribbles", content=_scribble_json())
        assert r.status_code == 200
        body = r.json()
        assert body["round"] == 1
        assert body["changed_frames"] == [0, 1, 2, 3]
        for t in range(4):
            m = client.get(f"/sessions/{sid}/rounds/1/frames/{t}/mask.png")
            assert m.status_code == 200
            assert m.headers["content-type"] == "image/png"
            img = Image.open(io.BytesIO(m.content))
            assert img.size == (64, 64)

    def test_bad_object_id(self, client, toy_pngs):
        sid = _upload(client, toy_pngs, num_objects=2).json()["session_id"]
        r = client.post(f"/sessions/{sid}/scribbles", content=_scribble_json(object_id=5))
        assert r.status_code == 422

    def test_bad_frame_index(self, client, toy_pngs):
        sid = _upload(client, toy_pngs).json()["session_id"]
        r = client.post(f"/sessions/{sid}/scribbles", content=_scribble_json(frame=9))
        assert r.status_code == 422

    def test_round0_background(self, client, toy_pngs):
        sid = _upload(client, toy_pngs).json()["session_id"]
        r = client.get(f"/sessions/{sid}/rounds/0/frames/0/mask.png")
        assert r.status_code == 200
        labels = np.asarray(Image.open(io.BytesIO(r.content)))
        assert (labels == 0).all()

    def test_mask_immutable(self, client, toy_pngs):
        sid = _upload(client, toy_pngs).json()["session_id"]
        client.post(f"/sessions/{sid}/scribbles", content=_scribble_json(frame=1))
        first = client.get(f"/sessions/{sid}/rounds/1/frames/2/mask.png").content
        second = client.get(f"/sessions/{sid}/rounds/1/frames/2/mask.png").content
        assert first == second
        client.post(f"/sessions/{sid}/scribbles", content=_scribble_json(frame=3))
        assert client.get(f"/sessions/{sid}/rounds/1/frames/2/mask.png").content == first

    def test_frame_out_of_range_404(self, client, toy_pngs):
        sid = _upload(client, toy_pngs).json()["session_id"]
        assert client.get(f"/sessions/{sid}/rounds/0/frames/4/mask.png").status_code == 404

    def test_future_round_404(self, client, toy_pngs):
        sid = _upload(client, toy_pngs).json()["session_id"]
        assert client.get(f"/sessions/{sid}/rounds/1/frames/0/mask.png").status_code == 404

    def test_unknown_session_404(self, client):
        assert client.get("/sessions/doesnotexist").status_code == 404

    def test_frame_endpoint(self, client, toy_pngs):
        sid = _upload(client, toy_pngs).json()["session_id"]
        r = client.get(f"/sessions/{sid}/frames/2.png")
        assert r.status_code == 200
        assert r.content == toy_pngs[2]

    def test_prob_endpoint(self, client, toy_pngs):
        sid = _upload(client, toy_pngs).json()["session_id"]
        client.post(f"/sessions/{sid}/scribbles", content=_scribble_json())
        r = client.get(f"/sessions/{sid}/rounds/1/frames/0/prob_1.png")
        assert r.status_code == 200


class TestStatus:
    def test_fresh_session(self, client, toy_pngs):
        sid = _upload(client, toy_pngs, num_objects=2).json()["session_id"]
        body = client.get(f"/sessions/{sid}").json()
        assert body == {
            "state": "idle",
            "round": 0,
            "T": 4,
            "M": 2,
            "annotation_history": [],
            "error": None,
        }

    def test_identical_submits_make_successive_rounds(self, client, toy_pngs):
        sid = _upload(client, toy_pngs).json()["session_id"]
        payload = _scribble_json(frame=1)
        first = client.post(f"/sessions/{sid}/scribbles", content=payload)
        second = client.post(f"/sessions/{sid}/scribbles", content=payload)
        assert first.json()["round"] == 1
        assert second.json()["round"] == 2

    def test_history_after_rounds(self, client, toy_pngs):
        sid = _upload(client, toy_pngs).json()["session_id"]
        client.post(f"/sessions/{sid}/scribbles", content=_scribble_json(frame=1))
        client.post(f"/sessions/{sid}/scribbles", content=_scribble_json(frame=3))
        body = client.get(f"/sessions/{sid}").json()
        assert body["round"] == 2
        assert body["annotation_history"] == [[1, 1], [2, 3]]


class TestConcurrency:
    def test_busy_session_conflicts(self, tiny_model, tmp_path, toy_pngs, monkeypatch):
        app = create_app(tiny_model, tmp_path / "data", async_rounds=True)
        release = threading.Event()
        real_run = service_mod.run_round

        def slow_run(session, scribbles, model, **kw):
            release.wait(timeout=10)
            return real_run(session, scribbles, model, **kw)

        monkeypatch.setattr(service_mod, "run_round", slow_run)
        with TestClient(app) as client:
            sid = _upload(client, toy_pngs).json()["session_id"]
            first = client.post(f"/sessions/{sid}/scribbles", content=_scribble_json())
            assert first.status_code == 200
            assert first.json()["state"] == "running_round"
            second = client.post(f"/sessions/{sid}/scribbles", content=_scribble_json())
            assert second.status_code == 409
            release.set()
            for _ in range(100):
                if client.get(f"/sessions/{sid}").json()["state"] == "idle":
                    break
                time.sleep(0.05)
            assert client.get(f"/sessions/{sid}").json()["round"] == 1


class TestRestart:
    def test_rounds_survive_restart_byte_identical(self, tiny_model, tmp_path, toy_pngs):
        data_dir = tmp_path / "data"
        app = create_app(tiny_model, data_dir)
        with TestClient(app) as client:
            sid = _upload(client, toy_pngs).json()["session_id"]
            client.post(f"/sessions/{sid}/scribbles", content=_scribble_json())
            before = {
                t: client.get(f"/sessions/{sid}/rounds/1/frames/{t}/mask.png").content
                for t in range(4)
            }
        app2 = create_app(tiny_model, data_dir)  # fresh process simulation
        with TestClient(app2) as client:
            status = client.get(f"/sessions/{sid}")
            assert status.status_code == 200
            assert status.json()["round"] == 1
            for t in range(4):
                after = client.get(f"/sessions/{sid}/rounds/1/frames/{t}/mask.png").content
                assert after == before[t]

    def test_resumed_session_accepts_rounds(self, tiny_model, tmp_path, toy_pngs):
        data_dir = tmp_path / "data"
        with TestClient(create_app(tiny_model, data_dir)) as client:
            sid = _upload(client, toy_pngs).json()["session_id"]
            client.post(f"/sessions/{sid}/scribbles", content=_scribble_json(frame=0))
        with TestClient(create_app(tiny_model, data_dir)) as client:
            r = client.post(f"/sessions/{sid}/scribbles", content=_scribble_json(frame=2))
            assert r.status_code == 200
            assert r.json()["round"] == 2
