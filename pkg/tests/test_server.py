"""Prediction service wire contract and ledger exactness."""

import json
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from mextract import models as mm
from mextract.oracle import DpConfig, TargetHandle
from mextract.server import PredictionService, ServerConfig


def make_model_file(tmp_path, d=4, k=3, seed=11):
    spec = mm.ModelSpec("softmax-regression", d, k)
    model = mm.init_model(spec, seed)
    rng = np.random.default_rng(seed)
    model.weights[0] += rng.normal(0, 0.5, size=model.weights[0].shape)
    path = tmp_path / "fixture.model"
    mm.save_model(model, path)
    return model, str(path)


def post(url, path, payload):
    req = urllib.request.Request(
        url + path,
        data=json.dumps(payload).encode(),
        headers={"Content-Type": "application/json"},
    )
    with urllib.request.urlopen(req, timeout=5) as resp:
        return resp.status, json.loads(resp.read().decode())


def post_raw(url, path, body: bytes):
    req = urllib.request.Request(
        url + path, data=body, headers={"Content-Type": "application/json"}
    )
    try:
        with urllib.request.urlopen(req, timeout=5) as resp:
            return resp.status, json.loads(resp.read().decode())
    except urllib.error.HTTPError as e:
        return e.code, json.loads(e.read().decode())


def get(url, path):
    with urllib.request.urlopen(url + path, timeout=5) as resp:
        return resp.status, json.loads(resp.read().decode())


@pytest.fixture
def service(tmp_path):
    model, path = make_model_file(tmp_path)
    svc = PredictionService(ServerConfig(model_path=path, port=0)).start_background()
    yield model, svc
    svc.shutdown()


class TestPredict:
    def test_matches_in_process_forward(self, service):
        model, svc = service
        rng = np.random.default_rng(0)
        X = rng.normal(size=(9, 4))
        status, reply = post(svc.url, "/v1/predict", {"instances": X.tolist()})
        assert status == 200
        assert reply["schema_version"] == 1
        expect = np.argmax(mm.forward_batch(model, X), axis=1)
        assert reply["labels"] == [int(v) for v in expect]
        assert reply["queries_used"] == 9

    def test_batch_too_large(self, tmp_path):
        _, path = make_model_file(tmp_path)
        svc = PredictionService(
            ServerConfig(model_path=path, port=0, max_batch=4)
        ).start_background()
        try:
            status, reply = post_raw(
                svc.url, "/v1/predict", json.dumps({"instances": [[0.0] * 4] * 5}).encode()
            )
            assert status == 413
            assert reply == {"error": "batch_too_large", "max_batch": 4, "schema_version": 1}
        finally:
            svc.shutdown()

    def test_budget_exhausted(self, tmp_path):
        _, path = make_model_file(tmp_path)
        svc = PredictionService(ServerConfig(model_path=path, port=0, cap=5)).start_background()
        try:
            status, _ = post(svc.url, "/v1/predict", {"instances": [[0.0] * 4] * 3})
            assert status == 200
            status, reply = post_raw(
                svc.url, "/v1/predict", json.dumps({"instances": [[0.0] * 4] * 3}).encode()
            )
            assert status == 429
            assert reply["error"] == "budget_exhausted"
            assert reply["used"] == 3
            _, stats = get(svc.url, "/v1/stats")
            assert stats["queries_used"] == 3
        finally:
            svc.shutdown()

    def test_malformed_json_reports_position(self, service):
        _, svc = service
        status, reply = post_raw(svc.url, "/v1/predict", b'{"instances": [[1.0,')
        assert status == 400
        assert reply["error"] == "malformed_json"
        assert "position" in reply

    def test_wrong_dimension_rejected(self, service):
        _, svc = service
        status, reply = post_raw(
            svc.url, "/v1/predict", json.dumps({"instances": [[1.0, 2.0]]}).encode()
        )
        assert status == 400
        assert reply["error"] == "bad_request"

    def test_unknown_path_404(self, service):
        _, svc = service
        status, reply = post_raw(svc.url, "/v2/predict", b"{}")
        assert status == 404

    def test_predict_never_carries_probabilities(self, service):
        _, svc = service
        _, reply = post(svc.url, "/v1/predict", {"instances": [[0.0] * 4]})
        assert set(reply) == {"labels", "queries_used", "schema_version"}


class TestStats:
    def test_fresh_server_zero(self, service):
        _, svc = service
        _, stats = get(svc.url, "/v1/stats")
        assert stats["queries_used"] == 0
        assert stats["cap"] is None
        assert stats["dp_mechanism"] == "none"
        assert stats["model_spec"]["input_dim"] == 4

    def test_counts_batch_of_seven(self, service):
        _, svc = service
        post(svc.url, "/v1/predict", {"instances": [[0.0] * 4] * 7})
        _, stats = get(svc.url, "/v1/stats")
        assert stats["queries_used"] == 7

    def test_concurrent_clients_count_exactly(self, service):
        _, svc = service
        def one(i):
            return post(svc.url, "/v1/predict", {"instances": [[float(i)] * 4]})
        with ThreadPoolExecutor(max_workers=16) as pool:
            list(pool.map(one, range(100)))
        _, stats = get(svc.url, "/v1/stats")
        assert stats["queries_used"] == 100


class TestProbs:
    def test_disabled_by_default(self, service):
        _, svc = service
        status, reply = post_raw(
            svc.url, "/v1/probs", json.dumps({"instances": [[0.0] * 4]}).encode()
        )
        assert status == 403
        assert reply["error"] == "probs_disabled"

    def test_enabled_matches_predict_and_skips_ledger(self, tmp_path):
        model, path = make_model_file(tmp_path)
        svc = PredictionService(
            ServerConfig(model_path=path, port=0, expose_probs=True)
        ).start_background()
        try:
            rng = np.random.default_rng(1)
            X = rng.normal(size=(6, 4))
            _, probs_reply = post(svc.url, "/v1/probs", {"instances": X.tolist()})
            _, predict_reply = post(svc.url, "/v1/predict", {"instances": X.tolist()})
            argmax = [int(np.argmax(row)) for row in probs_reply["probs"]]
            assert argmax == predict_reply["labels"]
            _, stats = get(svc.url, "/v1/stats")
            assert stats["queries_used"] == 6  # probs not counted
        finally:
            svc.shutdown()


class TestRemoteHandle:
    def test_remote_equals_in_process(self, service):
        model, svc = service
        rng = np.random.default_rng(2)
        X = rng.normal(size=(8, 4))
        remote = TargetHandle.remote(svc.url)
        local = TargetHandle.in_process(model)
        assert np.array_equal(remote.query_labels(X), local.query_labels(X))
        assert remote.ledger == 8

    def test_remote_budget_error(self, tmp_path):
        from mextract.errors import BudgetExhaustedError

        _, path = make_model_file(tmp_path)
        svc = PredictionService(ServerConfig(model_path=path, port=0, cap=2)).start_background()
        try:
            remote = TargetHandle.remote(svc.url)
            remote.query_labels(np.zeros((2, 4)))
            with pytest.raises(BudgetExhaustedError):
                remote.query_labels(np.zeros((1, 4)))
        finally:
            svc.shutdown()

    def test_remote_probs_capability_error_names_flag(self, service):
        from mextract.errors import CapabilityError

        _, svc = service
        remote = TargetHandle.remote(svc.url)
        with pytest.raises(CapabilityError) as err:
            remote.remote_probs(np.zeros((1, 4)))
        assert "--expose-probs" in str(err.value)

    def test_remote_stats(self, service):
        _, svc = service
        remote = TargetHandle.remote(svc.url)
        assert remote.stats()["queries_used"] == 0


class TestDpServer:
    def test_dp_labels_replayable_and_noisy(self, tmp_path):
        model, path = make_model_file(tmp_path)
        dp = DpConfig(mechanism="laplace-output", epsilon=0.5, noise_seed=4)
        cfg = ServerConfig(model_path=path, port=0, dp=dp)
        rng = np.random.default_rng(3)
        X = rng.normal(size=(30, 4))

        svc1 = PredictionService(cfg).start_background()
        try:
            _, first = post(svc1.url, "/v1/predict", {"instances": X.tolist()})
        finally:
            svc1.shutdown()
        svc2 = PredictionService(cfg).start_background()
        try:
            _, second = post(svc2.url, "/v1/predict", {"instances": X.tolist()})
        finally:
            svc2.shutdown()
        assert first["labels"] == second["labels"]
        clean = np.argmax(mm.forward_batch(model, X), axis=1)
        assert any(a != int(b) for a, b in zip(first["labels"], clean))
