"""Dump real served payloads as frontend fixtures (run from repo root)."""

import json
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))
sys.path.insert(0, str(ROOT / "tests"))

from fastapi.testclient import TestClient

from engine_fixtures import FIG2_SYM0, build_engine
from medconsult.service import ServiceRuntime, create_app

OUT = ROOT / "frontend" / "fixtures"
OUT.mkdir(parents=True, exist_ok=True)


def capture(sensor_csv: str, replies: list[str]) -> dict:
    runtime = ServiceRuntime(engine=build_engine(ROOT / "fixtures",
                                                 sensor_csv=sensor_csv))
    client = TestClient(create_app(runtime))
    created = client.post("/v1/sessions", json={
        "patient_id": "p1", "first_symptoms": FIG2_SYM0}).json()
    sid = created["session"]["session_id"]
    turns = [created["turn"]]
    for text in replies:
        resp = client.post(f"/v1/sessions/{sid}/messages", json={"text": text})
        if resp.status_code != 200:
            break
        turns.append(resp.json())
    snapshot = client.get(f"/v1/sessions/{sid}").json()
    report = snapshot["transcript"]["final_report"]
    return {"session": snapshot["session"], "turns": turns,
            "transcript": snapshot["transcript"], "report": report,
            "patient_messages": [FIG2_SYM0] + replies}


normal = capture("sensors_normal.csv",
                 ["I'm not sure, I haven't measured it.", "Okay."])
unreliable = capture("sensors_deviant.csv",
                     ["I'm not sure, I haven't measured it.", "Okay.",
                      "The in-lab result came back: heart rate 72."])

(OUT / "session_normal.json").write_text(
    json.dumps(normal, indent=2, sort_keys=True) + "\n", encoding="utf-8")
(OUT / "session_unreliable.json").write_text(
    json.dumps(unreliable, indent=2, sort_keys=True) + "\n", encoding="utf-8")
print("wrote", OUT / "session_normal.json")
print("wrote", OUT / "session_unreliable.json")
