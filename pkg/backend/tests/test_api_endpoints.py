"""
API Endpoint Tests

Tests for the FastAPI endpoints. The module-level runner is patched with a
mock where only routing and serialization are under test.
"""

import numpy as np
import pytest
from fastapi.testclient import TestClient

from app import app


@pytest.fixture
def client():
    return TestClient(app)


@pytest.fixture
def mocked_client(mocker, mock_runner):
    mocker.patch("app.runner", mock_runner)
    return TestClient(app)


# ============================================================================
# GET /api/mechanisms
# ============================================================================


@pytest.mark.api
class TestMechanismsEndpoint:
    """Test suite for /api/mechanisms"""

    def test_lists_registry(self, client):
        response = client.get("/api/mechanisms")
        assert response.status_code == 200
        names = [m["name"] for m in response.json()]
        assert names == ["trig", "pos", "gerf", "saderf", "aderf", "sderf", "arf"]

    def test_uses_runner_registry(self, mocked_client):
        data = mocked_client.get("/api/mechanisms").json()
        assert len(data) == 2
        assert set(data[0]) == {"name", "description", "fitted"}


# ============================================================================
# POST /api/fit
# ============================================================================


@pytest.mark.api
class TestFitEndpoint:
    """Test suite for /api/fit"""

    def test_fit_success(self, mocked_client, mock_runner):
        response = mocked_client.post("/api/fit", json={"mechanism": "gerf", "x": [[0.0, 0.0]]})
        assert response.status_code == 200
        assert response.json()["family"] == "ge"
        name, xs, ys = mock_runner.fit_dump.call_args.args
        assert name == "gerf"
        assert ys is xs

    def test_real_fit(self, client, rng):
        x = rng.standard_normal((10, 3)).tolist()
        response = client.post("/api/fit", json={"mechanism": "sderf", "x": x})
        assert response.status_code == 200
        body = response.json()
        assert body["family"] == "de"
        assert body["report"]["objective_value"] is not None

    def test_singular_moments(self, client):
        payload = {"mechanism": "aderf", "x": [[0.0, 0.0], [0.0, 0.0]]}
        response = client.post("/api/fit", json=payload)
        assert response.status_code == 422
        assert "SingularMoments" in response.json()["detail"]

    def test_unknown_mechanism(self, client):
        response = client.post("/api/fit", json={"mechanism": "favor", "x": [[1.0]]})
        assert response.status_code == 400

    def test_unexpected_error(self, mocked_client, mock_runner):
        mock_runner.fit_dump.side_effect = RuntimeError("boom")
        response = mocked_client.post("/api/fit", json={"mechanism": "gerf", "x": [[1.0]]})
        assert response.status_code == 500
        assert response.json()["detail"] == "boom"

    def test_missing_points(self, client):
        response = client.post("/api/fit", json={"mechanism": "gerf"})
        assert response.status_code == 422


# ============================================================================
# POST /api/variance and /api/attention
# ============================================================================


@pytest.mark.api
class TestVarianceEndpoint:
    """Test suite for /api/variance"""

    def test_forwards_request(self, mocked_client, mock_runner):
        payload = {"mechs": ["pos"], "sigmas": [0.5], "regime": "sphere", "d": 3, "L": 8}
        response = mocked_client.post("/api/variance", json=payload)
        assert response.status_code == 200
        assert response.json()["command"] == "variance-compare"
        kwargs = mock_runner.variance_compare.call_args.kwargs
        assert kwargs["regime"].value == "sphere"
        assert kwargs["l"] == 8

    def test_bad_regime(self, mocked_client):
        response = mocked_client.post(
            "/api/variance", json={"mechs": ["pos"], "sigmas": [1.0], "regime": "cube"}
        )
        assert response.status_code == 422


@pytest.mark.api
class TestAttentionEndpoint:
    """Test suite for /api/attention"""

    def test_attention(self, client, rng):
        q, k, v = (rng.standard_normal((4, 2)).tolist() for _ in range(3))
        response = client.post("/api/attention", json={"q": q, "k": k, "v": v, "M": 16})
        assert response.status_code == 200
        body = response.json()
        assert np.asarray(body["output"]).shape == (4, 2)
        assert body["error"] >= 0.0
        assert body["min_denominator"] > 0.0

    def test_trig_rejected(self, client):
        payload = {"q": [[0.1]], "k": [[0.2]], "v": [[1.0]], "mechanism": "trig"}
        response = client.post("/api/attention", json=payload)
        assert response.status_code == 400
        assert "TrigUnsupported" in response.json()["detail"]

    def test_shape_mismatch(self, client):
        payload = {"q": [[0.1, 0.2]], "k": [[0.2]], "v": [[1.0]]}
        assert client.post("/api/attention", json=payload).status_code == 400
