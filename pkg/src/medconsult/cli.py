"""Operator command line.

Exit codes: 0 success, 1 domain error, 2 usage error. Machine-readable JSON
goes to stdout; diagnostics go to stderr. Every subcommand is a thin wrapper
over the library operations.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .bootstrap import build_offline_engine, default_mock_gateway
from .config import ChunkPolicy, EngineConfig
from .evaluation import SyntheticPatient, retrieval_rate, score_dialogue, simulate_patient
from .gateway import MockGateway
from .guidelines import GuidelineError, NodeKind, parse_guideline
from .mocks import RubricJudge
from .sensors import (
    SensorStore,
    make_filter_corpus,
    parse_sensor_csv,
    parse_sensor_jsonl,
    train_filter,
)
from .vector_store import SyncEvent, VectorStore, VectorStoreError


class DomainError(Exception):
    pass


def _emit(payload) -> None:
    print(json.dumps(payload, sort_keys=True))


def _load_config(path: str | None) -> EngineConfig:
    if path:
        return EngineConfig.from_file(path)
    return EngineConfig()


def _build_gateway(providers_path: str | None):
    """Deterministic mocks by default; a providers profile switches to the
    OpenAI-compatible remote gateway (credential from the environment)."""
    if not providers_path:
        return None
    from .gateway import ProviderProfile, RemoteGateway, RetryPolicy

    raw = json.loads(Path(providers_path).read_text(encoding="utf-8"))
    retry = RetryPolicy(**raw.pop("retry", {}))
    return RemoteGateway(ProviderProfile(retry=retry, **raw))


# -- subcommand handlers -------------------------------------------------------

def cmd_kb_build(args) -> int:
    config = _load_config(args.config)
    policy = ChunkPolicy(args.chunk_size, args.overlap) \
        if args.chunk_size else config.chunk_policy
    gateway = MockGateway()
    store = VectorStore(gateway.embedder)
    documents = 0
    for source in args.sources:
        path = Path(source)
        if path.suffix == ".jsonl":
            for line in path.read_text(encoding="utf-8").splitlines():
                if not line.strip():
                    continue
                doc = json.loads(line)
                store.ingest_document(doc["source_id"], doc["text"],
                                      doc["kind"], policy)
                documents += 1
        else:  # plain UTF-8 text file: one document, textbook kind
            store.ingest_document(path.stem, path.read_text(encoding="utf-8"),
                                  "textbook", policy)
            documents += 1
    store.save_snapshot(args.snapshot)
    _emit({"documents": documents, "chunks": len(store),
           "snapshot": str(args.snapshot)})
    return 0


def cmd_kb_sync(args) -> int:
    gateway = MockGateway()
    store = VectorStore.load_snapshot(args.snapshot, gateway.embedder)
    event_raw = json.loads(Path(args.event).read_text(encoding="utf-8"))
    config = _load_config(args.config)
    try:
        event = SyncEvent(kind=event_raw["kind"], payload=event_raw["payload"])
        if event.kind != "medical-update":
            raise DomainError("the CLI syncs medical-update events only; "
                              "sensor-hourly sync runs inside the service")
        report = store.synchronize(event, policy=config.chunk_policy)
    except (VectorStoreError, KeyError, ValueError) as exc:
        raise DomainError(str(exc)) from exc
    store.save_snapshot(args.out or args.snapshot)
    _emit({"added": report.added, "replaced": report.replaced,
           "elapsed": round(report.elapsed, 6)})
    return 0


def cmd_guideline_check(args) -> int:
    failures = 0
    for file in args.files:
        source = Path(file).read_text(encoding="utf-8")
        try:
            tree = parse_guideline(source)
        except GuidelineError as exc:
            print(f"{file}: {type(exc).__name__}: {exc}", file=sys.stderr)
            failures += 1
            continue
        counts = {kind.value: 0 for kind in NodeKind}
        for node in tree.nodes.values():
            counts[node.kind.value] += 1
        _emit({"file": str(file), "disease": tree.disease,
               "version": tree.version, "nodes": len(tree.nodes),
               "by_kind": counts, "metrics": sorted(tree.metrics)})
    return 1 if failures else 0


def cmd_sensors_ingest(args) -> int:
    text = Path(args.file).read_text(encoding="utf-8")
    if args.file.endswith(".csv"):
        records = parse_sensor_csv(text)
    else:
        records = parse_sensor_jsonl(text)
    store = SensorStore()
    report = store.ingest_records(args.patient, records)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            for metric in store.metrics_for(args.patient):
                for rec in store.records(args.patient, metric):
                    fh.write(json.dumps({
                        "patient_id": rec.patient_id, "metric": rec.metric,
                        "timestamp": rec.timestamp.isoformat(),
                        "value": rec.value, "units": rec.units}) + "\n")
    _emit({"accepted": report.accepted, "replaced": report.replaced,
           "rejected": [{"index": i, "reason": r} for i, r in report.rejected]})
    return 0


def cmd_filter_train(args) -> int:
    gateway = default_mock_gateway()
    if args.data:
        labeled = []
        for line in Path(args.data).read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            labeled.append((rec["query"], bool(rec["needs_sensor"])))
    else:
        labeled = make_filter_corpus(args.synthetic, seed=args.seed)
    eval_set = None
    if args.eval:
        eval_set = []
        for line in Path(args.eval).read_text(encoding="utf-8").splitlines():
            if line.strip():
                rec = json.loads(line)
                eval_set.append((rec["query"], bool(rec["needs_sensor"])))
    try:
        model, accuracy = train_filter(labeled, gateway, augment=args.augment,
                                       eval_set=eval_set, seed=args.seed)
    except ValueError as exc:
        raise DomainError(str(exc)) from exc
    if args.out:
        model.save(args.out)
    _emit({"held_out_accuracy": accuracy,
           "training_samples": model.metadata["sample_count"],
           "augmented": model.metadata["augmented"],
           "model": args.out})
    return 0


def cmd_consult(args) -> int:
    engine = build_offline_engine(
        args.data, gateway=_build_gateway(args.providers),
        config=_load_config(args.config),
        sensor_csv=args.sensor_csv, sensor_patient=args.patient)
    print("Describe your symptoms (blank line or EOF to finish):",
          file=sys.stderr)
    opening = sys.stdin.readline().strip()
    if not opening:
        raise DomainError("no symptoms provided on stdin")
    session = engine.begin_session(opening, patient_id=args.patient)
    result = engine.step(session, None)
    _print_turn(result)
    while session.phase != "concluded":
        line = sys.stdin.readline()
        if not line:
            break
        text = line.strip()
        if not text:
            break
        result = engine.step(session, text)
        _print_turn(result)
    report = session.final_report or engine.finalize_diagnosis(session)
    _emit({"final_report": report.to_dict()})
    return 0


def _print_turn(result) -> None:
    print(f"doctor: {result.doctor_msg}", file=sys.stderr)
    table = {c["disease"]: c["final_prob"] for c in result.candidates}
    _emit({"turn": result.turn, "action": result.action.to_dict(),
           "probabilities": table})


def cmd_eval_score(args) -> int:
    from .gateway import ProviderProfile, RemoteGateway

    if args.judge == "scripted":
        judge = MockGateway(handlers={"doctor": RubricJudge()})
    else:
        judge = RemoteGateway(ProviderProfile(endpoint=args.endpoint))
    guidelines = {}
    if args.guidelines:
        from .guidelines import GuidelineLibrary

        guidelines = GuidelineLibrary.load_dir(args.guidelines).trees
    writer = csv.writer(sys.stdout)
    writer.writerow(["transcript", "ground_truth", "compliance",
                     "sensor_utilization", "accuracy", "overall",
                     "retrieval_rate"])
    totals = []
    for file in sorted(Path(args.transcripts).glob("*.json")):
        transcript = json.loads(file.read_text(encoding="utf-8"))
        truth = transcript.get("ground_truth", args.truth or "")
        score = score_dialogue(transcript, truth, guidelines.get(truth), judge)
        rate = retrieval_rate(transcript)
        writer.writerow([file.name, truth, score.compliance,
                         score.sensor_utilization, score.accuracy,
                         round(score.overall, 4), round(rate, 4)])
        totals.append(score.overall)
    if totals:
        print(f"aggregate overall: {sum(totals) / len(totals):.4f}",
              file=sys.stderr)
    return 0


def cmd_eval_simulate(args) -> int:
    patients = SyntheticPatient.load_jsonl(args.patients)
    if args.n:
        patients = patients[:args.n]
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for patient in patients:
        engine = build_offline_engine(
            args.data, config=_load_config(args.config),
            sensor_csv=args.sensor_csv, sensor_patient=patient.patient_id)
        transcript = simulate_patient(patient, engine)
        out_file = out_dir / f"{patient.profile_id}.json"
        out_file.write_text(json.dumps(transcript, sort_keys=True, indent=2),
                            encoding="utf-8")
        _emit({"profile": patient.profile_id,
               "phase": transcript["phase"],
               "truncated": transcript["truncated"],
               "top": transcript["final_report"]["ranked"][0]["disease"]
               if transcript["final_report"] and transcript["final_report"]["ranked"]
               else None,
               "out": str(out_file)})
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import ServiceRuntime, SessionLog, create_app, mount_ui

    engine = build_offline_engine(
        args.data, gateway=_build_gateway(args.providers),
        config=_load_config(args.config),
        sensor_csv=args.sensor_csv, sensor_patient=args.patient)
    log = SessionLog(args.sessions_dir) if args.sessions_dir else None
    runtime = ServiceRuntime(engine=engine, log=log)
    runtime.recover()
    app = create_app(runtime)
    if args.ui:
        mount_ui(app, args.ui)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


# -- parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="medconsult",
        description="Diagnostic consultation engine operator commands")
    sub = parser.add_subparsers(dest="command", required=True)

    kb = sub.add_parser("kb", help="knowledge base administration")
    kb_sub = kb.add_subparsers(dest="kb_command", required=True)
    build = kb_sub.add_parser("build", help="chunk and embed knowledge sources")
    build.add_argument("--sources", nargs="+", required=True,
                       help="JSON-lines files of {source_id, kind, text}")
    build.add_argument("--snapshot", required=True)
    build.add_argument("--chunk-size", type=int, default=None)
    build.add_argument("--overlap", type=int, default=100)
    build.add_argument("--config", default=None)
    build.set_defaults(func=cmd_kb_build)
    sync = kb_sub.add_parser("sync", help="apply a sync event to a snapshot")
    sync.add_argument("--snapshot", required=True)
    sync.add_argument("--event", required=True, help="JSON file {kind, payload}")
    sync.add_argument("--out", default=None)
    sync.add_argument("--config", default=None)
    sync.set_defaults(func=cmd_kb_sync)

    guideline = sub.add_parser("guideline", help="guideline DSL tools")
    g_sub = guideline.add_subparsers(dest="guideline_command", required=True)
    check = g_sub.add_parser("check", help="validate and summarize DSL files")
    check.add_argument("files", nargs="+")
    check.set_defaults(func=cmd_guideline_check)

    sensors = sub.add_parser("sensors", help="sensor data tools")
    s_sub = sensors.add_subparsers(dest="sensors_command", required=True)
    ingest = s_sub.add_parser("ingest", help="validate and normalize a trace")
    ingest.add_argument("--file", required=True, help="CSV or JSON-lines trace")
    ingest.add_argument("--patient", required=True)
    ingest.add_argument("--out", default=None,
                        help="write normalized JSON-lines here")
    ingest.set_defaults(func=cmd_sensors_ingest)

    filt = sub.add_parser("filter", help="sensor retrieval filter")
    f_sub = filt.add_subparsers(dest="filter_command", required=True)
    train = f_sub.add_parser("train", help="train the retrieval filter")
    train.add_argument("--data", default=None,
                       help="JSON-lines {query, needs_sensor}; omit to use "
                            "the synthetic corpus")
    train.add_argument("--synthetic", type=int, default=200,
                       help="synthetic corpus size when --data is omitted")
    train.add_argument("--eval", default=None,
                       help="held-out JSON-lines evaluation set")
    train.add_argument("--augment", action="store_true")
    train.add_argument("--seed", type=int, default=0)
    train.add_argument("--out", default=None, help="model artifact path")
    train.set_defaults(func=cmd_filter_train)

    consult = sub.add_parser("consult", help="interactive terminal consultation")
    consult.add_argument("--data", required=True, help="fixture/data directory")
    consult.add_argument("--patient", default="p1")
    consult.add_argument("--sensor-csv", default=None)
    consult.add_argument("--config", default=None)
    consult.add_argument("--providers", default=None,
                         help="provider profile JSON for remote models")
    consult.set_defaults(func=cmd_consult)

    ev = sub.add_parser("eval", help="evaluation workflows")
    e_sub = ev.add_subparsers(dest="eval_command", required=True)
    score = e_sub.add_parser("score", help="score transcript files to CSV")
    score.add_argument("--transcripts", required=True)
    score.add_argument("--guidelines", default=None)
    score.add_argument("--judge", choices=["scripted", "remote"],
                       default="scripted")
    score.add_argument("--endpoint", default="")
    score.add_argument("--truth", default=None)
    score.set_defaults(func=cmd_eval_score)
    simulate = e_sub.add_parser("simulate", help="run synthetic patients")
    simulate.add_argument("--patients", required=True)
    simulate.add_argument("--data", required=True)
    simulate.add_argument("--n", type=int, default=None)
    simulate.add_argument("--out", required=True)
    simulate.add_argument("--sensor-csv", default=None)
    simulate.add_argument("--config", default=None)
    simulate.set_defaults(func=cmd_eval_simulate)

    serve = sub.add_parser("serve", help="run the HTTP service")
    serve.add_argument("--data", required=True)
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8800)
    serve.add_argument("--sessions-dir", default=None)
    serve.add_argument("--ui", default=None, help="built web client directory")
    serve.add_argument("--sensor-csv", default=None)
    serve.add_argument("--patient", default="p1")
    serve.add_argument("--config", default=None)
    serve.add_argument("--providers", default=None,
                       help="provider profile JSON for remote models")
    serve.set_defaults(func=cmd_serve)

    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except DomainError as exc:
        print(json.dumps({"error": str(exc)}), file=sys.stderr)
        return 1
    except (OSError, json.JSONDecodeError) as exc:
        print(json.dumps({"error": f"{type(exc).__name__}: {exc}"}),
              file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
