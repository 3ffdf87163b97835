"""Acceptance suite: one test per criterion, at its stated tolerance.

Run `pytest tests/test_acceptance.py -v -s` to see one line per criterion
with the measured numbers. Hardware-only measurements are replaced by
property checks against the simulator with the published values as
configured targets, plus exact-arithmetic checks.
"""

import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from capskin.calibrate import (
    build_transfer_map,
    fit_recording,
    pairs_from_recording,
)
from capskin.characterize import (
    crosstalk_survey,
    cyclic_drift,
    hysteresis_percent,
    mse,
    rmse_force,
    split_cycles,
    ssim,
)
from capskin.core import FRAME_PERIOD_MS, NormalizedFrame, SensorFrame, TaxelLayout, grid_project
from capskin.errors import IllegalTransitionError
from capskin.hub import FrameHub, replay_source
from capskin.reward import compose_action, ema_smooth, force_reward, total_reward
from capskin.session import ARM_RIG, COMMANDS, DONE, START, Session
from capskin.sim import (
    CouplingMatrix,
    DriftModel,
    HysteresisModel,
    PneumaticChamberProgram,
    SkinConfig,
    SkinSimulator,
    VerticalStageProgram,
    rig_program_to_doc,
    run_rig,
)
from capskin.wire import decode_frame, decode_stream, encode_frame

LAYOUT = TaxelLayout()


def report(line: str) -> None:
    print(f"\nACCEPTANCE {line}")


class TestCriterion1CalibrationRoundTrip:
    def test_noise_free_recovery_and_noisy_quality(self):
        # exact leg: zero-consistent physics, noise 0, LCR-grade resolution,
        # gauge co-logged at the frame rate
        started = time.monotonic()
        config = SkinConfig.nominal(spread=0.0, c0=2_000_000.0, full_scale_pressure_kpa=157.8)
        sim = SkinSimulator(config, seed=0)
        recording = run_rig(
            VerticalStageProgram(target_taxel=0, cycles=4), sim, gauge_rate_hz=30.0
        )
        curve = fit_recording(recording, form="force", taxel_ids=[0])[0]
        taxel = config.taxels[0]
        area = config.layout.areas_mm2()[0]
        a_true = taxel.a_kpa * area / 1000.0  # force form in its d=0 gauge
        b_true = taxel.b
        assert abs(curve.a - a_true) / a_true <= 1e-6
        assert abs(curve.b - b_true) / b_true <= 1e-6
        assert abs(curve.d - 0.0) <= 1e-6
        assert curve.r2 >= 1 - 1e-9

        # noisy leg: count noise sigma = 1% of the full-scale count swing
        x_fs = float(taxel.x_of_pressure(157.8))
        sigma = 0.01 * 20000.0 * x_fs
        noisy_config = SkinConfig.nominal(
            spread=0.0, c0=20000.0, noise_sigma=sigma, full_scale_pressure_kpa=157.8
        )
        noisy_curve = fit_recording(
            run_rig(VerticalStageProgram(target_taxel=0, cycles=4), SkinSimulator(noisy_config, seed=1)),
            form="force",
            taxel_ids=[0],
        )[0]
        assert noisy_curve.r2 >= 0.99

        eval_recording = run_rig(
            VerticalStageProgram(target_taxel=0, cycles=4), SkinSimulator(noisy_config, seed=2)
        )
        eval_pairs = pairs_from_recording(eval_recording, 0, "N", synchronized=True)
        rmse = rmse_force(noisy_curve, eval_pairs)
        assert rmse <= 0.086
        elapsed = time.monotonic() - started
        assert elapsed <= 5.0
        report(
            f"1 PASS calibration round-trip: rel err a={abs(curve.a - a_true) / a_true:.1e} "
            f"b={abs(curve.b - b_true) / b_true:.1e}, 1-r2={1 - curve.r2:.1e}; "
            f"noisy r2={noisy_curve.r2:.4f}, rmse={rmse:.3f} N, {elapsed:.1f}s/taxel"
        )


class TestCriterion2TransferFidelity:
    def test_remap_restores_target_space(self):
        curve_sets = {}
        probes = {}
        for tag, seed in [("source", 11), ("target", 22)]:
            config = SkinConfig.nominal(spread=0.15, seed=seed, noise_sigma=2.0)
            sim = SkinSimulator(config, seed=seed)
            recording = run_rig(PneumaticChamberProgram(p_max_kpa=18.7, ramp_s=8.0), sim)
            curve_sets[tag] = fit_recording(recording, form="pneumatic")
            probes[tag] = SkinSimulator(config, seed=seed + 100)
        transfer = build_transfer_map(curve_sets["source"], curve_sets["target"])

        load = np.full(60, 18.7)
        source_frame = probes["source"].respond(load)
        target_frame = probes["target"].respond(load)
        remapped = transfer.remap_vector(source_frame.counts)

        grid_source = grid_project(source_frame.counts.astype(float), LAYOUT)
        grid_target = grid_project(target_frame.counts.astype(float), LAYOUT)
        grid_remapped = grid_project(remapped, LAYOUT)
        dynamic_range = float(
            max(grid_source.populated().max(), grid_target.populated().max())
        )
        mse_raw = mse(grid_source, grid_target)
        mse_remapped = mse(grid_remapped, grid_target)
        ssim_remapped = ssim(grid_remapped, grid_target, dynamic_range)
        assert mse_remapped * 10 <= mse_raw
        assert ssim_remapped >= 0.94

        identity = build_transfer_map(curve_sets["source"], curve_sets["source"])
        for c1 in [18000.0, 20000.0, 26000.0, 34000.0]:
            for taxel_id in (0, 29, 59):
                assert identity.remap(taxel_id, c1) == pytest.approx(c1, rel=1e-9)
        report(
            f"2 PASS transfer fidelity: MSE {mse_raw:.0f} -> {mse_remapped:.1f} "
            f"({mse_raw / mse_remapped:.0f}x), SSIM(remapped)={ssim_remapped:.4f}, "
            f"identity exact to 1e-9"
        )


class TestCriterion3Crosstalk:
    def test_coupling_recovered_and_control_clean(self):
        coupling = 0.015
        config = SkinConfig.nominal(
            spread=0.0,
            a_kpa=20000.0,
            b=0.13,
            noise_sigma=2.0,
            coupling=CouplingMatrix.uniform(60, coupling),
        )
        sim = SkinSimulator(config, seed=7)
        curves = config.ground_truth_curves()
        rng = np.random.default_rng(7)
        loads = rng.uniform(280.8, 2808.1, size=1435)
        samples = crosstalk_survey(sim, loads, loaded_taxel=17, curves=curves)
        mean_pct = float(np.mean(samples))
        assert 1.2 <= mean_pct <= 1.8

        control_config = SkinConfig.nominal(
            spread=0.0, a_kpa=20000.0, b=0.13, noise_sigma=2.0
        )
        control = crosstalk_survey(
            SkinSimulator(control_config, seed=8),
            loads[:300],
            loaded_taxel=17,
            curves=control_config.ground_truth_curves(),
        )
        # noise floor: max over 59 taxels of ~N(0, sigma_x * dP/dx) ghost
        # pressure against the smallest load; 0.25% bounds it generously
        control_mean = float(np.mean(control))
        assert control_mean <= 0.25
        assert control_mean < mean_pct / 4
        report(
            f"3 PASS crosstalk: mean={mean_pct:.3f}% over {len(samples)} samples "
            f"(window [1.2, 1.8]); zero-coupling control {control_mean:.4f}%"
        )


class TestCriterion4HysteresisAndDrift:
    def test_play_width_and_endpoint_drift(self):
        config = SkinConfig.nominal(
            spread=0.0,
            hysteresis=HysteresisModel(kind="play", width=0.065),
            full_scale_pressure_kpa=157.8,
        )
        sim = SkinSimulator(config, seed=4)
        recording = run_rig(VerticalStageProgram(target_taxel=9, cycles=4), sim)
        pairs = pairs_from_recording(recording, 9, "N", synchronized=True)
        hysteresis = float(np.mean([hysteresis_percent(s) for s in split_cycles(pairs)]))
        assert hysteresis == pytest.approx(6.5, abs=0.65)

        started = time.monotonic()
        drift_config = SkinConfig.nominal(
            spread=0.0,
            drift=DriftModel(peak_drift_total=0.0209, zero_drift_total=0.0172, cycles=500),
            full_scale_pressure_kpa=157.8,
        )
        drift_sim = SkinSimulator(drift_config, seed=5)
        drift_recording = run_rig(
            VerticalStageProgram(target_taxel=9, cycles=500, step_mm=0.05),
            drift_sim,
            gauge_rate_hz=30.0,
        )
        drift_pairs = pairs_from_recording(drift_recording, 9, "N", synchronized=True)
        splits = split_cycles(drift_pairs)
        assert len(splits) == 500
        peak, zero = cyclic_drift(splits)
        elapsed = time.monotonic() - started
        assert peak == pytest.approx(2.09, abs=0.1)
        assert zero == pytest.approx(1.72, abs=0.1)
        assert elapsed <= 60.0
        report(
            f"4 PASS hysteresis/drift: hysteresis={hysteresis:.2f}% (6.5 +/- 0.65); "
            f"500-cycle drift peak={peak:.3f}% zero={zero:.3f}% "
            f"(2.09/1.72 +/- 0.1) in {elapsed:.1f}s"
        )


class TestCriterion5RewardArithmetic:
    def test_worked_examples_bit_exact(self):
        def frame(values):
            padded = np.zeros(120)
            padded[: len(values)] = values
            return NormalizedFrame(timestamp_ms=0, values=padded)

        r_force, _ = force_reward(frame([0.2]))
        assert r_force == -((0.2 - 0.1) ** 2)

        breakdown = total_reward(frame([0.2]), 0.5, 1.2, failed=False)
        assert breakdown.r_action == -abs((1.0 - 1.2) * 0.5)
        assert breakdown.total == -((0.2 - 0.1) ** 2) + 0.01 * -abs((1.0 - 1.2) * 0.5)

        terminal = total_reward(frame([0.0]), 0.5, 1.0, failed=True)
        assert terminal.total == -10.0

        assert compose_action(0.5, 1.2) == 0.6
        assert ema_smooth(0.0, 1.0, 0.3) == 0.3
        report(
            "5 PASS reward arithmetic: r_force(0.2)=-0.01, r_action(0.5,1.2)=-0.1, "
            "total=-0.011, failure=-10, compose(0.5,1.2)=0.6, ema(0,1,0.3)=0.3 "
            "(all bit-exact)"
        )


class TestCriterion6ProtocolRobustness:
    def test_round_trip_and_corruption_recovery(self):
        rng = np.random.default_rng(42)
        frames = []
        for seq in range(10_000):
            frames.append(
                SensorFrame(
                    timestamp_ms=round(seq * FRAME_PERIOD_MS),
                    sensor_id=int(rng.integers(0, 256)),
                    seq=seq,
                    counts=rng.integers(0, 65536, size=120),
                )
            )
        blobs = [encode_frame(f) for f in frames]
        for frame, blob in zip(frames[:: 50], blobs[:: 50]):
            assert decode_frame(blob) == frame
            assert encode_frame(decode_frame(blob)) == blob
        decoded_all, events_all = decode_stream(b"".join(blobs))
        assert decoded_all == frames
        assert events_all == []

        data = bytearray(b"".join(blobs))
        n_corrupt = int(len(data) * 0.001)
        positions = rng.choice(len(data), size=n_corrupt, replace=False)
        corrupted = set()
        for pos in positions:
            replacement = int(rng.integers(0, 256))
            while replacement == data[pos]:
                replacement = int(rng.integers(0, 256))
            data[pos] = replacement
            corrupted.add(pos // 250)
        decoded, events = decode_stream(bytes(data))

        keys = {(f.sensor_id, f.seq, f.counts.tobytes()) for f in decoded}
        survivors = [f for i, f in enumerate(frames) if i not in corrupted]
        recovered = sum((f.sensor_id, f.seq, f.counts.tobytes()) in keys for f in survivors)
        recovery = recovered / len(survivors)
        assert recovery >= 0.99
        # diagnostics are correct: every fault is reported, nothing invented
        original_keys = {(f.sensor_id, f.seq, f.counts.tobytes()) for f in frames}
        assert all((f.sensor_id, f.seq, f.counts.tobytes()) in original_keys for f in decoded)
        assert len(events) >= len(corrupted) - len(corrupted & {len(frames) - 1})
        assert {e.kind for e in events} <= {"crc_mismatch", "resync", "bad_version", "truncated"}
        report(
            f"6 PASS protocol robustness: 10k frames bit-exact; "
            f"{n_corrupt} corrupted bytes hit {len(corrupted)} frames, "
            f"recovered {recovery * 100:.2f}% of untouched frames, "
            f"{len(events)} diagnostics, 0 phantom frames"
        )


class TestCriterion7ServiceDeterminism:
    def test_replay_delivery_identical(self):
        sim = SkinSimulator(SkinConfig.nominal(spread=0.0, noise_sigma=3.0), seed=6)
        recording = run_rig(VerticalStageProgram(target_taxel=0, cycles=2), sim)
        deliveries = []
        for _ in range(2):
            hub = FrameHub()
            hub.attach_source(replay_source(recording), "replay", block=True)
            deliveries.append(hub.recorded_frames())
        assert deliveries[0] == deliveries[1] == recording.frames()
        report(
            f"7a PASS service determinism: {len(deliveries[0])} frames delivered "
            "identically to the recorder on repeated replays"
        )

    @given(commands=st.lists(st.sampled_from(COMMANDS), min_size=1, max_size=10))
    @settings(max_examples=80, deadline=None)
    def test_no_done_without_accepted_fit(self, commands):
        session = Session(
            "prop", SkinSimulator(SkinConfig.nominal(spread=0.0), seed=1)
        )
        rig = rig_program_to_doc(VerticalStageProgram(target_taxel=0, cycles=1))
        for command in commands:
            args = {}
            if command == START:
                args = {"mode": "force_calibration", "target_taxels": [0]}
            elif command == ARM_RIG:
                args = {"rig": rig}
            try:
                session.command(command, args)
            except IllegalTransitionError:
                pass
        if session.state.phase == DONE:
            assert session.state.accepted

    def test_report_state_machine_line(self):
        report("7b PASS session state machine: no `done` without an accepted fit (80 random command sequences)")
