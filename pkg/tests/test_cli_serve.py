import json
import threading
import urllib.request

import numpy as np
import pytest

from hirec.cli import main
from hirec.feedback import synthesize_topics
from hirec.harness import ExperimentConfig
from hirec.realtime import train_rt
from hirec.serve import make_server

from test_factorization import random_fm


@pytest.fixture()
def ratings_file(tmp_path):
    rng = np.random.default_rng(0)
    lines = []
    ts = 0
    for _ in range(600):
        u = int(rng.integers(1, 40))
        v = int(rng.integers(1, 60))
        r = int(rng.integers(1, 6))
        lines.append(f"{u}::{v}::{r}::{ts}")
        ts += 1
    path = tmp_path / "ratings.dat"
    path.write_text("\n".join(lines) + "\n")
    return path


@pytest.fixture()
def config_file(tmp_path):
    cfg = ExperimentConfig(algo="CF-MF", seed=5, n_users=50, n_items=80,
                           n_topics=3, affinity=0.85, n_events=2500, n=5,
                           k=5, iters=6, epochs_phase1=4, epochs_phase2=4)
    path = tmp_path / "config.json"
    path.write_text(cfg.to_json())
    return path


class TestCliStages:
    def test_ingest_split_train_recommend(self, ratings_file, tmp_path):
        out = tmp_path / "work"
        assert main(["ingest", "--data", str(ratings_file), "--out", str(out)]) == 0
        assert (out / "interactions.tsv").exists()
        assert (out / "user_index.tsv").exists()
        assert main(["split", "--out", str(out)]) == 0
        assert (out / "split" / "train.tsv").exists()
        assert main(["train", "--algo", "HI-RT", "--out", str(out),
                     "--k", "5"]) == 0
        assert (out / "models" / "HI-RT_stacked.bin").exists()
        assert main(["recommend", "--algo", "HI-RT", "--out", str(out),
                     "--k", "5", "--n", "4"]) == 0
        lines = (out / "recommendations.tsv").read_text().splitlines()
        assert lines[0] == "user\trank\titem\tscore\tchannel"
        assert len(lines) > 1

    def test_evaluate_with_config(self, config_file, tmp_path, capsys):
        out = tmp_path / "run"
        assert main(["evaluate", "--config", str(config_file),
                     "--out", str(out)]) == 0
        assert "auc=" in capsys.readouterr().out
        assert (out / "report.txt").exists()

    def test_compare_writes_table(self, config_file, tmp_path, capsys):
        out = tmp_path / "cmp"
        assert main(["compare", "--config", str(config_file),
                     "--algos", "CF-RT,HI-RT", "--out", str(out)]) == 0
        printed = capsys.readouterr().out
        assert "CF-RT" in printed and "HI-RT" in printed
        assert (out / "compare.txt").exists()

    def test_simulate_loop_emits_timeseries(self, tmp_path):
        out = tmp_path / "loop"
        assert main(["simulate-loop", "--out", str(out), "--rounds", "3",
                     "--users", "20", "--items", "40", "--n", "4",
                     "--k", "4", "--seed", "2"]) == 0
        lines = (out / "loop_timeseries.csv").read_text().splitlines()
        assert len(lines) == 4


class TestCliExitCodes:
    def test_usage_error_is_1(self):
        assert main(["train", "--algo", "NOPE", "--out", "/tmp/x"]) == 1
        assert main(["no-such-command"]) == 1

    def test_data_error_is_2(self, tmp_path):
        assert main(["ingest", "--data", str(tmp_path / "missing.dat"),
                     "--out", str(tmp_path)]) == 2
        # split before ingest
        assert main(["split", "--out", str(tmp_path / "empty")]) == 2

    def test_parse_error_is_2(self, tmp_path):
        bad = tmp_path / "bad.dat"
        bad.write_text("1::2::9::0\n")  # rating out of range
        assert main(["ingest", "--data", str(bad), "--out", str(tmp_path)]) == 2


class TestServe:
    def test_recommend_and_event_endpoints(self):
        rng = np.random.default_rng(11)
        fm = random_fm(rng, 20, 60, p_obs=0.3)
        model = train_rt(fm, k=5, seed=4)
        server = make_server(model, fm)
        port = server.server_address[1]
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        try:
            url = f"http://127.0.0.1:{port}"
            with urllib.request.urlopen(f"{url}/recommend?user=0&n=5") as resp:
                assert resp.status == 200
                recs = json.loads(resp.read())
            assert isinstance(recs, list) and len(recs) <= 5
            for rec in recs:
                assert set(rec) == {"item", "score"}

            payload = json.dumps({"user": "0", "item": 3,
                                  "feedback": "negative"}).encode()
            req = urllib.request.Request(f"{url}/event", data=payload,
                                         method="POST")
            with urllib.request.urlopen(req) as resp:
                assert json.loads(resp.read()) == {"ok": True}

            with urllib.request.urlopen(f"{url}/recommend?user=0&n=5") as resp:
                recs_after = json.loads(resp.read())
            assert all(r["item"] != 3 for r in recs_after)

            # unknown user id starts an empty session rather than failing
            with urllib.request.urlopen(f"{url}/recommend?user=ghost&n=3") as resp:
                assert json.loads(resp.read()) == []
        finally:
            server.shutdown()
            server.server_close()

    def test_bad_requests(self):
        rng = np.random.default_rng(13)
        fm = random_fm(rng, 10, 30, p_obs=0.3)
        model = train_rt(fm, k=4, seed=1)
        server = make_server(model, fm)
        port = server.server_address[1]
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        try:
            url = f"http://127.0.0.1:{port}"
            with pytest.raises(urllib.error.HTTPError) as err:
                urllib.request.urlopen(f"{url}/recommend")
            assert err.value.code == 400
            with pytest.raises(urllib.error.HTTPError) as err:
                urllib.request.urlopen(f"{url}/nope")
            assert err.value.code == 404
            req = urllib.request.Request(f"{url}/event", data=b"not json",
                                         method="POST")
            with pytest.raises(urllib.error.HTTPError) as err:
                urllib.request.urlopen(req)
            assert err.value.code == 400
        finally:
            server.shutdown()
            server.server_close()
