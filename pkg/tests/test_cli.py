"""CLI exit codes and wrapper parity with the library operations."""

import csv
import io
import json

import pytest

from medconsult.cli import run


def run_cli(capsys, argv):
    code = run(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestGuidelineCheck:
    def test_valid_tree_exit_zero_with_summary(self, fixtures_dir, capsys):
        tree = fixtures_dir / "guidelines" / "acute_bronchitis.json"
        code, out, err = run_cli(capsys, ["guideline", "check", str(tree)])
        assert code == 0
        summary = json.loads(out.strip())
        assert summary["disease"] == "acute bronchitis"
        assert summary["nodes"] == sum(summary["by_kind"].values())

    def test_dangling_tree_exit_one_with_diagnostic(self, fixtures_dir, capsys):
        bad = fixtures_dir / "guidelines_bad" / "dangling.json"
        code, out, err = run_cli(capsys, ["guideline", "check", str(bad)])
        assert code == 1
        assert "DanglingChildError" in err
        assert "ghost" in err

    def test_unknown_flag_exit_two(self, fixtures_dir, capsys):
        code, _, _ = run_cli(capsys, ["guideline", "check", "--bogus"])
        assert code == 2

    def test_unknown_subcommand_exit_two(self, capsys):
        code, _, _ = run_cli(capsys, ["frobnicate"])
        assert code == 2


class TestKb:
    def test_build_then_sync(self, fixtures_dir, tmp_path, capsys):
        snapshot = tmp_path / "kb.json"
        code, out, _ = run_cli(capsys, [
            "kb", "build", "--sources", str(fixtures_dir / "textbook.jsonl"),
            "--snapshot", str(snapshot)])
        assert code == 0
        built = json.loads(out.strip())
        assert built["documents"] == 12
        assert snapshot.exists()

        event = tmp_path / "event.json"
        event.write_text(json.dumps({
            "kind": "medical-update",
            "payload": {"documents": [{"source_id": "textbook/new",
                                       "kind": "textbook",
                                       "text": "New knowledge. " * 40}]}}))
        code, out, _ = run_cli(capsys, [
            "kb", "sync", "--snapshot", str(snapshot), "--event", str(event)])
        assert code == 0
        report = json.loads(out.strip())
        assert report["added"] > 0 and report["replaced"] == 0

    def test_build_accepts_plain_text_files(self, tmp_path, capsys):
        doc = tmp_path / "notes.txt"
        doc.write_text("plain clinical text " * 60)
        snapshot = tmp_path / "kb.json"
        code, out, _ = run_cli(capsys, [
            "kb", "build", "--sources", str(doc), "--snapshot", str(snapshot)])
        assert code == 0
        built = json.loads(out.strip())
        assert built["documents"] == 1
        assert built["chunks"] >= 3

    def test_sync_rejects_sensor_events(self, fixtures_dir, tmp_path, capsys):
        snapshot = tmp_path / "kb.json"
        run_cli(capsys, ["kb", "build", "--sources",
                         str(fixtures_dir / "textbook.jsonl"),
                         "--snapshot", str(snapshot)])
        event = tmp_path / "event.json"
        event.write_text(json.dumps({"kind": "sensor-hourly",
                                     "payload": {"patient_id": "p1"}}))
        code, _, err = run_cli(capsys, [
            "kb", "sync", "--snapshot", str(snapshot), "--event", str(event)])
        assert code == 1
        assert "error" in err


class TestSensorsIngest:
    def test_ingest_reports_and_normalizes(self, fixtures_dir, tmp_path, capsys):
        out_file = tmp_path / "normalized.jsonl"
        code, out, _ = run_cli(capsys, [
            "sensors", "ingest", "--file", str(fixtures_dir / "sensors_normal.csv"),
            "--patient", "p1", "--out", str(out_file)])
        assert code == 0
        report = json.loads(out.strip())
        assert report["accepted"] == 240
        assert len(out_file.read_text().splitlines()) == 240


class TestFilterTrain:
    def test_synthetic_training_prints_accuracy(self, tmp_path, capsys):
        model_file = tmp_path / "filter.json"
        code, out, _ = run_cli(capsys, [
            "filter", "train", "--synthetic", "40", "--seed", "3",
            "--out", str(model_file)])
        assert code == 0
        result = json.loads(out.strip())
        assert 0.0 <= result["held_out_accuracy"] <= 1.0
        assert model_file.exists()

    def test_augment_flag(self, tmp_path, capsys):
        code, out, _ = run_cli(capsys, [
            "filter", "train", "--synthetic", "24", "--augment"])
        assert code == 0
        assert json.loads(out.strip())["augmented"] is True

    def test_too_small_corpus_domain_error(self, capsys):
        code, _, err = run_cli(capsys, ["filter", "train", "--synthetic", "8"])
        assert code == 1
        assert "error" in err


class TestEval:
    def _patients_file(self, tmp_path):
        path = tmp_path / "patients.jsonl"
        path.write_text(json.dumps({
            "profile_id": "fig2", "ground_truth": "gastritis",
            "opening": "Lately I am always hungry and eating more but still "
                       "losing weight, and my stomach burns after meals.",
            "answers": {"burning": "Yes.", "appetite": "Yes."},
            "withheld": ["heart rate"], "patient_id": "p1"}) + "\n")
        return path

    def test_simulate_then_score(self, fixtures_dir, tmp_path, capsys):
        out_dir = tmp_path / "transcripts"
        code, out, _ = run_cli(capsys, [
            "eval", "simulate", "--patients", str(self._patients_file(tmp_path)),
            "--data", str(fixtures_dir), "--out", str(out_dir),
            "--sensor-csv", "sensors_normal.csv"])
        assert code == 0
        line = json.loads(out.strip().splitlines()[0])
        assert line["top"] == "gastritis"

        code, out, err = run_cli(capsys, [
            "eval", "score", "--transcripts", str(out_dir),
            "--guidelines", str(fixtures_dir / "guidelines"),
            "--judge", "scripted"])
        assert code == 0
        rows = list(csv.reader(io.StringIO(out)))
        assert rows[0][:2] == ["transcript", "ground_truth"]
        fig2 = rows[1]
        assert fig2[1] == "gastritis"
        overall = float(fig2[5])
        mean = (float(fig2[2]) + float(fig2[3]) + float(fig2[4])) / 3
        assert overall == pytest.approx(mean, abs=1e-4)
        assert "aggregate overall" in err


class TestConsult:
    def test_interactive_session_over_stdin(self, fixtures_dir, capsys,
                                            monkeypatch):
        lines = io.StringIO(
            "Lately I am always hungry and eating more but still losing "
            "weight, and my stomach burns after meals.\n"
            "I'm not sure, I haven't measured it.\n"
            "Okay.\n")
        monkeypatch.setattr("sys.stdin", lines)
        code, out, err = run_cli(capsys, [
            "consult", "--data", str(fixtures_dir),
            "--sensor-csv", "sensors_normal.csv"])
        assert code == 0
        payloads = [json.loads(line) for line in out.strip().splitlines()]
        assert "final_report" in payloads[-1]
        assert payloads[-1]["final_report"]["ranked"][0]["disease"] == "gastritis"
        # per-turn probability tables rendered
        assert any("probabilities" in p for p in payloads)

    def test_empty_stdin_domain_error(self, fixtures_dir, capsys, monkeypatch):
        monkeypatch.setattr("sys.stdin", io.StringIO(""))
        code, _, err = run_cli(capsys, ["consult", "--data", str(fixtures_dir)])
        assert code == 1


class TestServe:
    def test_serve_wires_app_and_calls_uvicorn(self, fixtures_dir, tmp_path,
                                               monkeypatch, capsys):
        launched = {}

        def fake_run(app, host, port):
            launched["routes"] = {r.path for r in app.routes}
            launched["host"] = host

        import uvicorn

        monkeypatch.setattr(uvicorn, "run", fake_run)
        code, _, _ = run_cli(capsys, [
            "serve", "--data", str(fixtures_dir), "--host", "127.0.0.1",
            "--port", "9109", "--sessions-dir", str(tmp_path / "sessions")])
        assert code == 0
        assert "/v1/sessions" in launched["routes"]
        assert launched["host"] == "127.0.0.1"
