import csv
import math

import pytest

from rmq.service import create_app
from rmq.service.extensions import db

SMALL_RUN = {"K": 3, "N": 20, "scheme": "euler"}


@pytest.fixture
def app():
    app = create_app({"SQLALCHEMY_DATABASE_URI": "sqlite://", "TESTING": True, "RMQ_MAX_CARDINALITY": 50})
    yield app
    with app.app_context():
        db.session.remove()
        db.drop_all()


@pytest.fixture
def client(app):
    return app.test_client()


@pytest.fixture
def run_id(client):
    response = client.post("/api/runs", json=SMALL_RUN)
    assert response.status_code == 201
    return response.get_json()["run"]["id"]


def test_health(client):
    response = client.get("/api/health")
    assert response.status_code == 200
    assert response.get_json()["status"] == "healthy"


def test_no_session_secret(app):
    assert app.secret_key is None


def test_cors_allows_any_origin_without_credentials(client):
    response = client.get("/api/health", headers={"Origin": "http://example.org"})
    assert response.headers["Access-Control-Allow-Origin"] == "*"
    assert "Access-Control-Allow-Credentials" not in response.headers


class TestRuns:
    def test_create_stores_summary(self, client):
        response = client.post("/api/runs", json=SMALL_RUN)
        run = response.get_json()["run"]
        assert response.status_code == 201
        assert (run["K"], run["N"], run["scheme"], run["boundary"]) == (3, 20, "euler", "free")
        assert run["final_mean"] == pytest.approx(100.0 * math.exp(0.05), rel=5e-3)
        assert "alpha" not in run["config"]

    def test_list_and_get(self, client, run_id):
        listed = client.get("/api/runs").get_json()
        assert [r["id"] for r in listed] == [run_id]
        assert client.get(f"/api/runs/{run_id}").get_json()["id"] == run_id

    def test_unknown_run(self, client):
        response = client.get("/api/runs/999")
        assert response.status_code == 404
        assert response.get_json()["error"] == "Not found"

    def test_invalid_config(self, client):
        response = client.post("/api/runs", json={"scheme": "heun"})
        assert response.status_code == 400
        assert "heun" in response.get_json()["message"]

    def test_body_must_be_object(self, client):
        assert client.post("/api/runs", json=[1, 2]).status_code == 400

    def test_cardinality_limit(self, client):
        response = client.post("/api/runs", json={"N": 51})
        assert response.status_code == 400
        assert "limit" in response.get_json()["message"]

    def test_grid_download(self, client, run_id):
        response = client.get(f"/api/runs/{run_id}/grid")
        assert response.status_code == 200
        assert response.mimetype == "text/csv"
        assert "attachment" in response.headers["Content-disposition"]
        lines = response.get_data(as_text=True).splitlines()
        assert lines[0] == "# schema=rmq.grid.v1"
        assert len(list(csv.DictReader(lines[1:]))) == 3 * 20

    def test_delete_removes_prices(self, client, run_id):
        client.post(f"/api/runs/{run_id}/prices", json={"strikes": [100.0]})
        assert client.delete(f"/api/runs/{run_id}").status_code == 200
        assert client.get(f"/api/runs/{run_id}").status_code == 404
        assert client.get(f"/api/runs/{run_id}/prices").status_code == 404


class TestPrices:
    def test_price_and_list(self, client, run_id):
        response = client.post(
            f"/api/runs/{run_id}/prices", json={"instrument": "bermudan", "strikes": [90.0, 100.0, 110.0]}
        )
        assert response.status_code == 201
        prices = [p["price"] for p in response.get_json()["prices"]]
        assert prices == sorted(prices)
        stored = client.get(f"/api/runs/{run_id}/prices").get_json()
        assert [p["strike"] for p in stored] == [90.0, 100.0, 110.0]

    def test_barrier(self, client, run_id):
        response = client.post(
            f"/api/runs/{run_id}/prices", json={"instrument": "barrier", "strikes": 100.0, "level": 120.0}
        )
        assert response.status_code == 201
        assert response.get_json()["prices"][0]["level"] == 120.0

    @pytest.mark.parametrize(
        "body",
        [
            {"instrument": "asian", "strikes": [100.0]},
            {"strikes": []},
            {"strikes": ["abc"]},
            {"instrument": "barrier", "strikes": [100.0]},
            {"kind": "custom", "strikes": [100.0]},
        ],
    )
    def test_invalid_requests(self, client, run_id, body):
        assert client.post(f"/api/runs/{run_id}/prices", json=body).status_code == 400

    def test_unknown_run(self, client):
        assert client.post("/api/runs/999/prices", json={"strikes": [100.0]}).status_code == 404
