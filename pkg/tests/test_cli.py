import json

import numpy as np
import pytest

from capskin.cli import main
from capskin.recording import read_recording
from capskin.reward import ActionStep, write_action_log
from capskin.sim import (
    PneumaticChamberProgram,
    VerticalStageProgram,
    rig_program_to_doc,
)


def write_json(path, doc):
    path.write_text(json.dumps(doc))
    return str(path)


@pytest.fixture()
def physics_path(tmp_path):
    out = tmp_path / "physics.json"
    assert main(["emit-config", "--out", str(out), "--spread", "0.0"]) == 0
    return str(out)


def run_simulate(tmp_path, physics_path, rig, name="capture.rec"):
    rig_path = write_json(tmp_path / "rig.json", rig_program_to_doc(rig))
    rec_path = tmp_path / name
    assert (
        main(["simulate", "--physics", physics_path, "--rig", rig_path, "--out", str(rec_path)])
        == 0
    )
    return str(rec_path)


class TestSimulateCalibrate:
    def test_simulate_writes_readable_recording(self, tmp_path, physics_path):
        rec_path = run_simulate(
            tmp_path, physics_path, VerticalStageProgram(target_taxel=0, cycles=2)
        )
        recording = read_recording(rec_path)
        assert recording.frames()
        assert recording.gauge()

    def test_force_calibration_pipeline(self, tmp_path, physics_path):
        rec_path = run_simulate(
            tmp_path, physics_path, VerticalStageProgram(target_taxel=0, cycles=3)
        )
        curves_path = tmp_path / "curves.json"
        assert (
            main(
                ["calibrate", "force", "--rec", rec_path, "--taxels", "0", "--out", str(curves_path)]
            )
            == 0
        )
        doc = json.loads(curves_path.read_text())
        assert doc["schema"] == "capskin.curves/1"
        assert doc["curves"]["0"]["r2"] >= 0.99

    def test_transfer_build_and_apply(self, tmp_path):
        maps = {}
        for tag, seed in [("a", 1), ("b", 2)]:
            physics = tmp_path / f"physics_{tag}.json"
            assert main(["emit-config", "--out", str(physics), "--seed", str(seed)]) == 0
            rig_path = write_json(
                tmp_path / f"rig_{tag}.json",
                rig_program_to_doc(PneumaticChamberProgram(p_max_kpa=18.7, ramp_s=6.0)),
            )
            rec = tmp_path / f"{tag}.rec"
            assert (
                main(
                    ["simulate", "--physics", str(physics), "--rig", rig_path, "--out", str(rec)]
                )
                == 0
            )
            curves = tmp_path / f"curves_{tag}.json"
            assert main(["calibrate", "pneumatic", "--rec", str(rec), "--out", str(curves)]) == 0
            maps[tag] = (str(rec), str(curves))

        map_path = tmp_path / "map.json"
        assert (
            main(
                [
                    "transfer",
                    "build",
                    "--source",
                    maps["a"][1],
                    "--target",
                    maps["b"][1],
                    "--out",
                    str(map_path),
                ]
            )
            == 0
        )
        out_rec = tmp_path / "remapped.rec"
        assert (
            main(
                ["transfer", "apply", "--map", str(map_path), "--rec", maps["a"][0], "--out", str(out_rec)]
            )
            == 0
        )
        remapped = read_recording(out_rec)
        original = read_recording(maps["a"][0])
        assert len(remapped.frames()) == len(original.frames())


class TestCharacterizeRewardReplay:
    def test_characterize_emits_report(self, tmp_path, physics_path):
        rec_path = run_simulate(
            tmp_path, physics_path, VerticalStageProgram(target_taxel=0, cycles=3)
        )
        report_path = tmp_path / "report.json"
        assert (
            main(["characterize", "--rec", rec_path, "--taxels", "0", "--out", str(report_path)])
            == 0
        )
        doc = json.loads(report_path.read_text())
        assert doc["schema"] == "capskin.report/1"
        assert doc["cycles"] == 3

    def test_reward_eval(self, tmp_path, physics_path, capsys):
        rec_path = run_simulate(
            tmp_path, physics_path, VerticalStageProgram(target_taxel=0, cycles=1)
        )
        actions_path = tmp_path / "actions.log"
        write_action_log(
            str(actions_path),
            [ActionStep(0, 0.5, 1.0, False), ActionStep(3000, 0.5, 1.2, True)],
        )
        out_path = tmp_path / "rewards.jsonl"
        assert (
            main(
                [
                    "reward",
                    "eval",
                    "--recording",
                    rec_path,
                    "--actions",
                    str(actions_path),
                    "--out",
                    str(out_path),
                ]
            )
            == 0
        )
        lines = [json.loads(l) for l in out_path.read_text().splitlines()]
        assert len(lines) == 2
        assert lines[1]["r_failure"] == -10.0
        assert lines[1]["total"] == pytest.approx(
            lines[1]["r_force"] + 0.01 * lines[1]["r_action"] + lines[1]["r_failure"]
        )

    def test_replay_prints_ndjson(self, tmp_path, physics_path, capsys):
        rec_path = run_simulate(
            tmp_path,
            physics_path,
            VerticalStageProgram(target_taxel=0, cycles=1, noload_lead_s=0.1),
        )
        assert main(["replay", "--rec", rec_path, "--rate", "0"]) == 0
        lines = [json.loads(l) for l in capsys.readouterr().out.splitlines() if l.startswith("{")]
        recording = read_recording(rec_path)
        assert len(lines) == len(recording.frames())
        assert lines[0]["seq"] == 0
