"""Command-line interface.

  capskin simulate     --physics cfg.json --rig rig.json --out capture.rec
  capskin calibrate    force|pneumatic --rec capture.rec --out curves.json
  capskin transfer     build --source a.json --target b.json --out map.json
  capskin transfer     apply --map map.json --rec in.rec --out out.rec
  capskin characterize --rec capture.rec [--curves curves.json] --taxels 0,1
  capskin reward       eval --recording capture.rec --actions actions.log
  capskin replay       --rec capture.rec --rate 1.0
  capskin serve        --port 8000 --source sim|bytes|replay

JSON documents (layout, physics, rig, curves, transfer map, report) are
plain files; recordings use the line-oriented text format.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import calibrate as cal
from .characterize import characterize_recording
from .core import TaxelLayout, normalize
from .hub import FrameHub, pulsing_schedule, replay_source, simulator_source
from .recording import Recording, SensorFrame, read_recording, write_recording
from .reward import read_action_log, replay_rewards
from .service import create_app
from .session import SessionManager
from .sim import (
    SkinConfig,
    SkinSimulator,
    rig_program_from_doc,
    run_rig,
    skin_config_from_doc,
    skin_config_to_doc,
)
from .wire import decode_stream


def _load_json(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _dump_json(path: str | None, doc: dict) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True)
    if path is None or path == "-":
        print(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")


def _parse_taxels(spec: str | None) -> list[int] | None:
    if not spec:
        return None
    return [int(t) for t in spec.split(",") if t != ""]


def cmd_emit_config(args) -> int:
    """Write a nominal physics config and default rig docs to get started."""
    config = SkinConfig.nominal(noise_sigma=args.noise, spread=args.spread, seed=args.seed)
    _dump_json(args.out, skin_config_to_doc(config))
    return 0


def cmd_simulate(args) -> int:
    config = skin_config_from_doc(_load_json(args.physics))
    sim = SkinSimulator(config, sensor_id=args.sensor_id, seed=args.seed)
    program = rig_program_from_doc(_load_json(args.rig))
    recording = run_rig(program, sim, gauge_rate_hz=args.gauge_rate)
    write_recording(args.out, recording)
    print(f"wrote {len(recording.rows)} rows to {args.out}")
    return 0


def cmd_calibrate(args) -> int:
    recording = read_recording(args.rec)
    form = cal.FORCE if args.form == "force" else cal.PNEUMATIC
    taxels = _parse_taxels(args.taxels)
    curves = cal.fit_recording(recording, form=form, taxel_ids=taxels)
    sensor_id = recording.header.sensors[0].sensor_id
    _dump_json(args.out, cal.curves_to_doc(curves, sensor_id=sensor_id))
    worst = min(curves.values(), key=lambda c: c.r2)
    print(f"fitted {len(curves)} taxel(s); worst r2 = {worst.r2:.6f}")
    return 0


def cmd_transfer_build(args) -> int:
    source = cal.curves_from_doc(_load_json(args.source))
    target = cal.curves_from_doc(_load_json(args.target))
    transfer = cal.build_transfer_map(source, target)
    _dump_json(args.out, transfer.to_doc())
    print(f"transfer map covers {len(transfer.taxel_ids())} taxel(s)")
    return 0


def cmd_transfer_apply(args) -> int:
    transfer = cal.TransferMap.from_doc(_load_json(args.map))
    recording = read_recording(args.rec)
    rows = []
    for row in recording.rows:
        if isinstance(row, SensorFrame):
            remapped = transfer.remap_vector(row.counts)
            # recordings store integer counts, so this is a protocol boundary
            counts = np.maximum(np.rint(remapped), 0).astype(np.int64)
            rows.append(
                SensorFrame(
                    timestamp_ms=row.timestamp_ms,
                    sensor_id=row.sensor_id,
                    seq=row.seq,
                    counts=counts,
                )
            )
        else:
            rows.append(row)
    write_recording(args.out, Recording(header=recording.header, rows=rows))
    print(f"remapped {sum(isinstance(r, SensorFrame) for r in rows)} frames to {args.out}")
    return 0


def cmd_characterize(args) -> int:
    recording = read_recording(args.rec)
    curves = None
    if args.curves:
        curves = cal.curves_from_doc(_load_json(args.curves))
    taxels = _parse_taxels(args.taxels)
    if taxels is None:
        taxels = [0]
    report = characterize_recording(recording, taxel_ids=taxels, force_curves=curves)
    _dump_json(args.out, report.to_doc())
    return 0


def cmd_reward_eval(args) -> int:
    recording = read_recording(args.recording)
    frames = recording.frames()
    baseline = cal.baseline_from_recording(recording)
    normalized = [normalize(f, baseline) for f in frames]
    steps = read_action_log(args.actions)
    breakdowns = replay_rewards(normalized, steps)
    out = sys.stdout if args.out in (None, "-") else open(args.out, "w", encoding="utf-8")
    try:
        for step, breakdown in zip(steps, breakdowns):
            out.write(
                json.dumps(
                    {
                        "ts": step.timestamp_ms,
                        "r_force": breakdown.r_force,
                        "r_action": breakdown.r_action,
                        "r_failure": breakdown.r_failure,
                        "total": breakdown.total,
                        "masked_taxels": list(breakdown.masked_taxels),
                    }
                )
                + "\n"
            )
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_replay(args) -> int:
    recording = read_recording(args.rec)
    for frame in replay_source(recording, rate=args.rate):
        print(
            json.dumps(
                {
                    "ts": frame.timestamp_ms,
                    "sensor_id": frame.sensor_id,
                    "seq": frame.seq,
                    "counts": [int(c) for c in frame.counts],
                }
            )
        )
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    layout = TaxelLayout() if not args.layout else TaxelLayout.from_doc(_load_json(args.layout))
    hub = FrameHub()

    if args.source == "sim":
        for sensor_id in range(args.sensors):
            config = SkinConfig.nominal(layout=layout, noise_sigma=3.0, seed=args.seed + sensor_id)
            sim = SkinSimulator(config, sensor_id=sensor_id, seed=args.seed + sensor_id)
            hub.attach_source(
                simulator_source(sim, pulsing_schedule(layout.taxel_count), rate_hz=args.rate_hz),
                name=f"sim-{sensor_id}",
            )
    elif args.source == "replay":
        if not args.rec:
            print("--rec is required with --source replay", file=sys.stderr)
            return 2
        recording = read_recording(args.rec)
        hub.attach_source(replay_source(recording, rate=1.0), name="replay")
    elif args.source == "bytes":
        if not args.bytes_file:
            print("--bytes-file is required with --source bytes", file=sys.stderr)
            return 2
        with open(args.bytes_file, "rb") as fh:
            frames, diagnostics = decode_stream(fh.read(), taxel_count=args.wire_taxels)
        for event in diagnostics:
            print(f"codec: {event.kind} at byte {event.offset} {event.detail}", file=sys.stderr)
        hub.attach_source(iter(frames), name="bytes")

    def simulator_factory():
        config = SkinConfig.nominal(layout=layout, seed=args.seed)
        return SkinSimulator(config, seed=args.seed)

    sessions = SessionManager(
        simulator_factory=simulator_factory,
        layout=layout,
        frame_provider=hub.latest,
        transfer_provider=hub.active_transfer,
    )
    dashboard_html = None
    if args.dashboard:
        with open(args.dashboard, "r", encoding="utf-8") as fh:
            dashboard_html = fh.read()
    app = create_app(hub, layout, sessions, dashboard_html=dashboard_html)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="capskin", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    emit = sub.add_parser("emit-config", help="write a nominal physics config document")
    emit.add_argument("--out", default="-")
    emit.add_argument("--noise", type=float, default=0.0)
    emit.add_argument("--spread", type=float, default=0.15)
    emit.add_argument("--seed", type=int, default=0)
    emit.set_defaults(fn=cmd_emit_config)

    simulate = sub.add_parser("simulate", help="run a rig program on a simulated skin")
    simulate.add_argument("--physics", required=True)
    simulate.add_argument("--rig", required=True)
    simulate.add_argument("--out", required=True)
    simulate.add_argument("--seed", type=int, default=0)
    simulate.add_argument("--sensor-id", type=int, default=0)
    simulate.add_argument("--gauge-rate", type=float, default=10.0)
    simulate.set_defaults(fn=cmd_simulate)

    calibrate = sub.add_parser("calibrate", help="fit calibration curves from a recording")
    calibrate.add_argument("form", choices=["force", "pneumatic"])
    calibrate.add_argument("--rec", required=True)
    calibrate.add_argument("--out", default="-")
    calibrate.add_argument("--taxels", help="comma-separated taxel ids (default: all)")
    calibrate.set_defaults(fn=cmd_calibrate)

    transfer = sub.add_parser("transfer", help="build or apply a cross-sensor map")
    transfer_sub = transfer.add_subparsers(dest="transfer_command", required=True)
    build = transfer_sub.add_parser("build")
    build.add_argument("--source", required=True)
    build.add_argument("--target", required=True)
    build.add_argument("--out", default="-")
    build.set_defaults(fn=cmd_transfer_build)
    apply_ = transfer_sub.add_parser("apply")
    apply_.add_argument("--map", required=True)
    apply_.add_argument("--rec", required=True)
    apply_.add_argument("--out", required=True)
    apply_.set_defaults(fn=cmd_transfer_apply)

    characterize = sub.add_parser("characterize", help="compute sensor-quality metrics")
    characterize.add_argument("--rec", required=True)
    characterize.add_argument("--curves")
    characterize.add_argument("--taxels", help="comma-separated taxel ids (default: 0)")
    characterize.add_argument("--out", default="-")
    characterize.set_defaults(fn=cmd_characterize)

    reward = sub.add_parser("reward", help="reward tooling")
    reward_sub = reward.add_subparsers(dest="reward_command", required=True)
    reward_eval = reward_sub.add_parser("eval")
    reward_eval.add_argument("--recording", required=True)
    reward_eval.add_argument("--actions", required=True)
    reward_eval.add_argument("--out", default="-")
    reward_eval.set_defaults(fn=cmd_reward_eval)

    replay = sub.add_parser("replay", help="print a recording's frames as NDJSON")
    replay.add_argument("--rec", required=True)
    replay.add_argument("--rate", type=float, default=0.0, help="realtime multiple; 0 = unpaced")
    replay.set_defaults(fn=cmd_replay)

    serve = sub.add_parser("serve", help="run the streaming HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    serve.add_argument("--source", choices=["sim", "bytes", "replay"], default="sim")
    serve.add_argument("--rec", help="recording to replay (source=replay)")
    serve.add_argument("--bytes-file", help="raw codec bytes (source=bytes)")
    serve.add_argument("--wire-taxels", type=int, default=120)
    serve.add_argument("--sensors", type=int, default=2)
    serve.add_argument("--rate-hz", type=float, default=30.0)
    serve.add_argument("--seed", type=int, default=0)
    serve.add_argument("--layout", help="layout document (default: built-in 60-taxel finger)")
    serve.add_argument("--dashboard", help="HTML file to serve at /")
    serve.set_defaults(fn=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
