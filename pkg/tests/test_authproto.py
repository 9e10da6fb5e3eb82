"""Tests for the fingerprint database and the identification protocol."""
import copy
import threading
from dataclasses import replace

import numpy as np
import pytest

from vlc_fingerprint.authproto import (
    CLASSIFIER_MISMATCH,
    DISTANCE_EXCEEDED,
    DUPLICATE_ID,
    UNKNOWN_ID,
    FingerprintDatabase,
    InsufficientSamples,
    MalformedFingerprint,
    ScenarioError,
    calibrate_threshold,
    enroll,
    error_rates,
    register,
    run_scenario,
    verify,
)
from vlc_fingerprint.circuit import FrequencyGrid
from vlc_fingerprint.extract import OpticFingerprint
from vlc_fingerprint.synth import PopulationSpec, sample_geometries, sample_population

GRID = FrequencyGrid.logspace()
GAIN = 1e6


@pytest.fixture(scope="module")
def population():
    return sample_population(PopulationSpec(n_devices=5))


@pytest.fixture(scope="module")
def enrolled(population):
    return enroll(population, sample_geometries(5, seed=0), 4, GRID, 0.01, 0, GAIN)


@pytest.fixture
def db(enrolled):
    four = {k: v for k, v in enrolled.items() if k != "led05"}
    return FingerprintDatabase.build(four)


def centroid(fps):
    return OpticFingerprint.from_array(np.mean([f.as_array() for f in fps], axis=0))


class TestThreshold:
    def test_identical_fingerprints_give_zero(self):
        fp = OpticFingerprint(5.0, 5e-10, 15.0)
        other = OpticFingerprint(6.0, 4e-10, 12.0)
        db = FingerprintDatabase.build({"a": [fp] * 5, "b": [other] * 5})
        assert db.tau == 0.0

    def test_percentile_of_known_distances(self):
        # one device; points along r_c at centroid offsets chosen after normalization
        base = np.array([5.0, 5e-10, 15.0])
        offsets = np.concatenate([np.arange(1, 101), -np.arange(1, 101)])
        rows = [base * np.array([1 + 1e-3 * o, 1, 1]) for o in offsets]
        db = FingerprintDatabase.build({"a": [OpticFingerprint.from_array(r) for r in rows]})
        z_dist = np.abs(offsets) / np.std(offsets)
        assert db.tau == pytest.approx(np.percentile(z_dist, 99.0), rel=1e-9)

    def test_needs_five(self):
        fp = OpticFingerprint(5.0, 5e-10, 15.0)
        with pytest.raises(InsufficientSamples):
            FingerprintDatabase.build({"a": [fp] * 4, "b": [fp] * 5})

    def test_non_negative(self, db):
        assert calibrate_threshold(db) >= 0
        assert calibrate_threshold(FingerprintDatabase()) == 0.0


class TestVerify:
    def test_centroid_accepted(self, db):
        for dev_id, fps in db.entries.items():
            v = verify(db, centroid(fps), dev_id)
            assert v.accepted and v.matched_id == dev_id and v.distance <= db.tau

    def test_unknown_id(self, db, enrolled):
        v = verify(db, enrolled["led01"][0], "nobody")
        assert not v.accepted and v.reason == UNKNOWN_ID

    def test_wrong_claim_rejected(self, db):
        for claimed in db.ids:
            for owner in db.ids:
                if owner == claimed:
                    continue
                v = verify(db, centroid(db.entries[owner]), claimed)
                assert not v.accepted
                assert v.reason in (CLASSIFIER_MISMATCH, DISTANCE_EXCEEDED)

    def test_distance_boundary(self, db):
        dev = "led02"
        c = db.centroids[dev]
        z_dir = np.array([1.0, 0.0, 0.0])
        std, mean = db.normalizer.std, db.normalizer.mean

        def at(distance):
            return OpticFingerprint.from_array((c + distance * z_dir) * std + mean)

        inside = verify(db, at(db.tau * 0.999), dev)
        outside = verify(db, at(db.tau * 1.001), dev)
        if inside.matched_id == dev and outside.matched_id == dev:
            assert inside.accepted
            assert not outside.accepted and outside.reason == DISTANCE_EXCEEDED

    def test_accepted_implies_match_and_distance(self, db, enrolled):
        for dev_id, fps in enrolled.items():
            for fp in fps:
                for claim in db.ids:
                    v = verify(db, fp, claim)
                    if v.accepted:
                        assert v.matched_id == claim and v.distance <= db.tau

    def test_never_mutates(self, db, enrolled):
        before = (db.version, db.tau, copy.deepcopy(db.entries))
        for fp in enrolled["led05"]:
            verify(db, fp, "led01")
        assert (db.version, db.tau, db.entries) == before

    def test_empty_database(self):
        v = verify(FingerprintDatabase(), OpticFingerprint(5.0, 5e-10, 15.0), "led01")
        assert v.reason == UNKNOWN_ID

    def test_malformed(self, db):
        with pytest.raises(MalformedFingerprint):
            verify(db, [1.0, 2.0], "led01")
        with pytest.raises(MalformedFingerprint):
            verify(db, [1.0, -2.0, 3.0], "led01")


class TestRegister:
    def test_new_device(self, db, enrolled):
        v0 = db.version
        result = register(db, "led05", enrolled["led05"][:10])
        assert result.accepted and db.version == v0 + 1
        assert verify(db, centroid(db.entries["led05"]), "led05").accepted

    def test_duplicate(self, db, enrolled):
        v0, tau0 = db.version, db.tau
        result = register(db, "led01", enrolled["led05"])
        assert not result.accepted and result.reason == DUPLICATE_ID
        assert (db.version, db.tau) == (v0, tau0)

    def test_too_few(self, db, enrolled):
        with pytest.raises(InsufficientSamples):
            register(db, "led09", enrolled["led05"][:4])

    def test_originals_still_verify(self, db, enrolled):
        register(db, "led05", enrolled["led05"])
        for dev_id in ("led01", "led02", "led03", "led04"):
            assert verify(db, centroid(enrolled[dev_id]), dev_id).accepted

    def test_serialized_against_readers(self, db, enrolled):
        errors = []

        def reader():
            try:
                for _ in range(50):
                    verify(db, enrolled["led01"][0], "led01")
            except Exception as exc:    # pragma: no cover - surfaced below
                errors.append(exc)

        threads = [threading.Thread(target=reader) for _ in range(3)]
        for t in threads:
            t.start()
        register(db, "led05", enrolled["led05"])
        for t in threads:
            t.join()
        assert not errors


class TestErrorRates:
    def test_rates(self, db, enrolled):
        genuine = [(k, f) for k in db.ids for f in enrolled[k]]
        impostors = [("led01", f) for f in enrolled["led05"]]
        rates = error_rates(db, genuine, impostors)
        assert 0 <= rates["frr"] <= 0.05
        assert 0 <= rates["far"] <= 1
        assert rates["n_genuine"] == len(genuine)


def report(t, ue, claim, fp):
    return {"type": "report", "time": t, "ue": ue, "claimed_id": claim, "fingerprint": list(fp.as_array())}


class TestScenario:
    def test_happy_path(self, db, enrolled):
        fp = centroid(enrolled["led01"])
        transcript = run_scenario(db, {"events": [report(0.0, "ue1", "led01", fp)]})
        assert [m.kind for m in transcript] == ["OFReport", "VerifyRequest", "VerifyResult", "AccessDecision"]
        assert transcript[2].payload["verdict"] == "accept"
        assert transcript[3].payload["decision"] == "grant"
        assert [m.sender for m in transcript] == ["ue1", "AP", "SVS", "NMS"]

    def test_spoof_ends_in_alert(self, db, enrolled):
        transcript = run_scenario(db, {"events": [report(0.0, "eve", "led01", centroid(enrolled["led03"]))]})
        assert transcript[-1].kind == "Alert"
        assert transcript[-1].receiver == "ISE"

    def test_registration_flow(self, db, enrolled):
        fps = [list(f.as_array()) for f in enrolled["led05"]]
        events = [
            {"type": "register", "time": 0.0, "ue": "ue5", "new_id": "led05", "fingerprints": fps},
            report(1.0, "ue5", "led05", centroid(enrolled["led05"])),
        ]
        kinds = [(m.sender, m.receiver, m.kind) for m in run_scenario(db, {"events": events})]
        assert kinds == [
            ("ue5", "AP", "RegistrationRequest"),
            ("AP", "SVS", "RegistrationRequest"),
            ("SVS", "NMS", "RegistrationResult"),
            ("NMS", "ISE", "RegistrationResult"),
            ("ue5", "AP", "OFReport"),
            ("AP", "SVS", "VerifyRequest"),
            ("SVS", "NMS", "VerifyResult"),
            ("NMS", "ACS", "AccessDecision"),
        ]

    def test_safety_and_sequence(self, db, enrolled, population):
        events = []
        for i, dev in enumerate(["led01", "led02", "led03", "led04", "led01"]):
            events.append(report(0.001 * i, f"ue{i}", dev, enrolled[dev][i]))
        events.append(report(0.0005, "eve", "led02", enrolled["led05"][0]))
        transcript = run_scenario(db, {"events": events})
        by_ref = {(m.sender, m.seq): m for m in transcript}
        last = {}
        for m in transcript:
            assert m.seq > last.get(m.sender, 0)
            last[m.sender] = m.seq
            if m.kind == "AccessDecision":
                parent = by_ref[m.in_reply_to]
                assert parent.kind == "VerifyResult" and parent.payload["verdict"] == "accept"
                assert parent.payload["claimed_id"] == m.payload["device_id"]
        times = [m.time for m in transcript]
        assert times == sorted(times)

    def test_deterministic(self, enrolled):
        events = [report(0.0, "ue", "led02", enrolled["led02"][3]),
                  report(0.0, "eve", "led02", enrolled["led05"][3])]
        a = run_scenario(FingerprintDatabase.build({k: enrolled[k] for k in ("led01", "led02")}), {"events": events})
        b = run_scenario(FingerprintDatabase.build({k: enrolled[k] for k in ("led01", "led02")}), {"events": events})
        assert [m.to_dict() for m in a] == [m.to_dict() for m in b]

    @pytest.mark.parametrize("scenario", [
        {},
        {"events": "nope"},
        {"events": [{"type": "dance", "time": 0}]},
        {"events": [{"type": "report", "time": 0, "ue": "x"}]},
        {"events": [{"type": "report", "time": -1, "ue": "x", "claimed_id": "a", "fingerprint": [1, 1, 1]}]},
        {"events": [{"type": "report", "time": 0, "ue": "x", "claimed_id": "a", "fingerprint": [1, 1]}]},
        {"events": [{"type": "report", "time": 0, "ue": "x", "claimed_id": "a", "fingerprint": [1, 1, 1],
                     "extra": 1}]},
    ])
    def test_malformed(self, db, scenario):
        with pytest.raises(ScenarioError):
            run_scenario(db, scenario)
