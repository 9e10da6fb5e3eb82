"""Fingerprint database and the access-point identification protocol.

Roles (all in-process):

* ``AP``  - VLC access point; collects fingerprints from user equipment.
* ``SVS`` - security validation server; owns the fingerprint database.
* ``NMS`` - network management; turns verdicts into decisions.
* ``ACS`` - access control; receives grants.
* ``ISE`` - identity services; receives alerts and provisioning notices.

Messages travel over FIFO links with a fixed per-hop latency, so a
scenario run is a deterministic function of its script.

A report is accepted only when the classifier names the claimed device
*and* the z-normalized fingerprint lies within ``tau`` of that device's
centroid. The distance gate keeps a foreign device out even when the
classifier is forced to pick some registered label.
"""
from __future__ import annotations

import heapq
import itertools
import math
import threading
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .classify import (
    ClassifierModel,
    FeatureMatrix,
    Normalizer,
    apply_normalizer,
    fit_normalizer,
    predict,
    train_classifier,
)
from .extract import OpticFingerprint

MIN_FINGERPRINTS = 5
THRESHOLD_PERCENTILE = 99.0

MESSAGE_KINDS = (
    "OFReport", "VerifyRequest", "VerifyResult", "AccessDecision",
    "RegistrationRequest", "RegistrationResult", "Alert",
)

ACCEPTED = "accepted"
UNKNOWN_ID = "unknown id"
CLASSIFIER_MISMATCH = "classifier mismatch"
DISTANCE_EXCEEDED = "distance exceeded"
DUPLICATE_ID = "duplicate id"
REGISTERED = "registered"


class InsufficientSamples(ValueError):
    pass


class MalformedFingerprint(ValueError):
    pass


class ScenarioError(ValueError):
    pass


def _as_fingerprint(fp) -> OpticFingerprint:
    if isinstance(fp, OpticFingerprint):
        return fp
    try:
        values = [float(v) for v in fp]
    except (TypeError, ValueError) as exc:
        raise MalformedFingerprint(f"not a fingerprint: {fp!r}") from exc
    if len(values) != 3:
        raise MalformedFingerprint(f"fingerprint needs 3 values, got {len(values)}")
    try:
        return OpticFingerprint(*values)
    except ValueError as exc:
        raise MalformedFingerprint(str(exc)) from exc


# --- database --------------------------------------------------------------

@dataclass
class FingerprintDatabase:
    """Registered devices, their fingerprints and the trained matcher.

    Mutations go through :func:`register` (or :meth:`rebuild`) and bump
    ``version``. A lock serializes readers against the single writer.
    """

    entries: dict = field(default_factory=dict)
    normalizer: Optional[Normalizer] = None
    model: Optional[ClassifierModel] = None
    tau: float = 0.0
    version: int = 0
    kind: str = "fine-knn"
    hyper: dict = field(default_factory=dict)
    centroids: dict = field(default_factory=dict)
    _lock: threading.RLock = field(default_factory=threading.RLock, repr=False, compare=False)

    @classmethod
    def build(cls, entries: Mapping[str, Sequence], kind: str = "fine-knn", hyper: dict | None = None,
              version: int = 1) -> "FingerprintDatabase":
        db = cls(kind=kind, hyper=dict(hyper or {}))
        db._install({k: [_as_fingerprint(f) for f in v] for k, v in entries.items()})
        db.version = version
        return db

    def _install(self, entries: dict):
        for dev_id, fps in entries.items():
            if not fps:
                raise InsufficientSamples(f"device {dev_id!r} has no fingerprints")
        if not entries:
            self.entries, self.normalizer, self.model, self.tau, self.centroids = {}, None, None, 0.0, {}
            return
        fm = _feature_matrix(entries)
        normalizer = fit_normalizer(fm)
        z = FeatureMatrix(apply_normalizer(normalizer, fm.rows), fm.labels)
        model = train_classifier(self.kind, z, self.hyper) if len(entries) > 1 else None
        centroids = {dev: apply_normalizer(normalizer, np.array([f.as_array() for f in fps])).mean(axis=0)
                     for dev, fps in entries.items()}
        self.entries, self.normalizer, self.model, self.centroids = dict(sorted(entries.items())), normalizer, model, centroids
        self.tau = calibrate_threshold(self)

    @property
    def ids(self) -> list[str]:
        return sorted(self.entries)

    def normalized(self, fp) -> np.ndarray:
        return apply_normalizer(self.normalizer, _as_fingerprint(fp).as_array())


def _feature_matrix(entries: Mapping[str, Sequence[OpticFingerprint]]) -> FeatureMatrix:
    rows, labels = [], []
    for dev_id in sorted(entries):
        for fp in entries[dev_id]:
            rows.append(fp.as_array())
            labels.append(dev_id)
    return FeatureMatrix(np.array(rows), labels)


def calibrate_threshold(db: FingerprintDatabase, percentile: float = THRESHOLD_PERCENTILE) -> float:
    """Pooled within-device distance percentile in normalized units."""
    if not db.entries:
        return 0.0
    dists = []
    for dev_id, fps in db.entries.items():
        if len(fps) < MIN_FINGERPRINTS:
            raise InsufficientSamples(
                f"device {dev_id!r} has {len(fps)} fingerprints; need {MIN_FINGERPRINTS}")
        z = apply_normalizer(db.normalizer, np.array([f.as_array() for f in fps]))
        dists.append(np.linalg.norm(z - z.mean(axis=0), axis=1))
    return float(np.percentile(np.concatenate(dists), percentile))


@dataclass(frozen=True)
class Verdict:
    accepted: bool
    matched_id: Optional[str]
    score: float
    distance: float
    reason: str

    def to_dict(self) -> dict:
        return {"accepted": self.accepted, "matched_id": self.matched_id, "score": self.score,
                "distance": self.distance, "reason": self.reason}


def verify(db: FingerprintDatabase, fingerprint, claimed_id: str) -> Verdict:
    """Check a reported fingerprint against the claimed identity. Never mutates ``db``."""
    fp = _as_fingerprint(fingerprint)
    with db._lock:
        if claimed_id not in db.entries:
            return Verdict(False, None, 0.0, math.inf, UNKNOWN_ID)
        z = db.normalized(fp)
        if db.model is None:
            matched, score = db.ids[0], 1.0
        else:
            matched, score = predict(db.model, z)
        distance = float(np.linalg.norm(z - db.centroids[claimed_id]))
        if matched != claimed_id:
            return Verdict(False, matched, score, distance, CLASSIFIER_MISMATCH)
        if distance > db.tau:
            return Verdict(False, matched, score, distance, DISTANCE_EXCEEDED)
        return Verdict(True, matched, score, distance, ACCEPTED)


@dataclass(frozen=True)
class RegistrationResult:
    accepted: bool
    device_id: str
    reason: str
    version: int

    def to_dict(self) -> dict:
        return {"accepted": self.accepted, "device_id": self.device_id, "reason": self.reason,
                "version": self.version}


def register(db: FingerprintDatabase, device_id: str, fingerprints: Sequence) -> RegistrationResult:
    """Add a new device, retrain and recalibrate; duplicates leave ``db`` untouched."""
    fps = [_as_fingerprint(f) for f in fingerprints]
    if len(fps) < MIN_FINGERPRINTS:
        raise InsufficientSamples(f"registration needs >= {MIN_FINGERPRINTS} fingerprints, got {len(fps)}")
    with db._lock:
        if device_id in db.entries:
            return RegistrationResult(False, device_id, DUPLICATE_ID, db.version)
        staged = FingerprintDatabase(kind=db.kind, hyper=db.hyper)
        staged._install({**db.entries, device_id: fps})
        db.entries, db.normalizer, db.model = staged.entries, staged.normalizer, staged.model
        db.centroids, db.tau = staged.centroids, staged.tau
        db.version += 1
        return RegistrationResult(True, device_id, REGISTERED, db.version)


def error_rates(db: FingerprintDatabase, genuine: Sequence[tuple], impostors: Sequence[tuple]) -> dict:
    """False-reject rate over ``(id, fp)`` genuine pairs, false-accept rate over impostor claims."""
    rejected = sum(not verify(db, fp, dev).accepted for dev, fp in genuine)
    accepted = sum(verify(db, fp, dev).accepted for dev, fp in impostors)
    return {
        "frr": rejected / len(genuine) if genuine else float("nan"),
        "far": accepted / len(impostors) if impostors else float("nan"),
        "n_genuine": len(genuine),
        "n_impostor": len(impostors),
    }


# --- protocol simulation ---------------------------------------------------

@dataclass(frozen=True)
class AuthMessage:
    seq: int
    time: float
    sender: str
    receiver: str
    kind: str
    payload: dict
    in_reply_to: Optional[tuple] = None

    def to_dict(self) -> dict:
        return {"seq": self.seq, "time": self.time, "sender": self.sender, "receiver": self.receiver,
                "kind": self.kind, "payload": self.payload,
                "in_reply_to": list(self.in_reply_to) if self.in_reply_to else None}


class _Network:
    """FIFO delivery with a constant hop latency; ties resolve in send order."""

    def __init__(self, latency: float):
        self.latency = latency
        self.queue: list = []
        self.transcript: list[AuthMessage] = []
        self._order = itertools.count()
        self._seq: dict[str, int] = {}

    def send(self, now, sender, receiver, kind, payload, in_reply_to=None) -> AuthMessage:
        seq = self._seq.get(sender, 0) + 1
        self._seq[sender] = seq
        msg = AuthMessage(seq, round(now, 9), sender, receiver, kind, payload, in_reply_to)
        self.transcript.append(msg)
        heapq.heappush(self.queue, (now + self.latency, next(self._order), msg))
        return msg


class ProtocolSimulator:
    """Event-driven run of the verification and registration flows."""

    def __init__(self, db: FingerprintDatabase, latency: float = 1e-3):
        self.db = db
        self.net = _Network(latency)

    def _ref(self, msg: AuthMessage) -> tuple:
        return (msg.sender, msg.seq)

    def _deliver(self, now: float, msg: AuthMessage):
        net = self.net
        if msg.receiver == "AP" and msg.kind == "OFReport":
            # step 2: forward the extracted fingerprint to the SVS
            net.send(now, "AP", "SVS", "VerifyRequest", dict(msg.payload), self._ref(msg))
        elif msg.receiver == "AP" and msg.kind == "RegistrationRequest":
            net.send(now, "AP", "SVS", "RegistrationRequest", dict(msg.payload), self._ref(msg))
        elif msg.receiver == "SVS" and msg.kind == "VerifyRequest":
            verdict = verify(self.db, msg.payload["fingerprint"], msg.payload["claimed_id"])
            payload = {"ue": msg.payload["ue"], "claimed_id": msg.payload["claimed_id"],
                       "verdict": "accept" if verdict.accepted else "reject", **verdict.to_dict()}
            net.send(now, "SVS", "NMS", "VerifyResult", payload, self._ref(msg))
        elif msg.receiver == "SVS" and msg.kind == "RegistrationRequest":
            try:
                result = register(self.db, msg.payload["new_id"], msg.payload["fingerprints"])
                payload = {"ue": msg.payload["ue"], **result.to_dict()}
            except (InsufficientSamples, MalformedFingerprint) as exc:
                payload = {"ue": msg.payload["ue"], "accepted": False, "device_id": msg.payload["new_id"],
                           "reason": f"malformed request: {exc}", "version": self.db.version}
            net.send(now, "SVS", "NMS", "RegistrationResult", payload, self._ref(msg))
        elif msg.receiver == "NMS" and msg.kind == "VerifyResult":
            p = msg.payload
            if p["verdict"] == "accept":
                net.send(now, "NMS", "ACS", "AccessDecision",
                         {"ue": p["ue"], "device_id": p["claimed_id"], "decision": "grant"}, self._ref(msg))
            else:
                net.send(now, "NMS", "ISE", "Alert",
                         {"ue": p["ue"], "claimed_id": p["claimed_id"], "reason": p["reason"],
                          "action": "restrict"}, self._ref(msg))
        elif msg.receiver == "NMS" and msg.kind == "RegistrationResult":
            p = msg.payload
            if p["accepted"]:
                net.send(now, "NMS", "ISE", "RegistrationResult",
                         {**p, "provisioned": True}, self._ref(msg))
            else:
                net.send(now, "NMS", "ISE", "Alert",
                         {"ue": p["ue"], "claimed_id": p["device_id"], "reason": p["reason"],
                          "action": "deny registration"}, self._ref(msg))
        # ACS and ISE are sinks

    def run(self, events: Sequence[Mapping]) -> list[AuthMessage]:
        timeline = []
        for i, ev in enumerate(events):
            timeline.append((float(ev["time"]), i, ev))
        timeline.sort(key=lambda t: (t[0], t[1]))
        net = self.net
        pending = list(reversed(timeline))
        while pending or net.queue:
            next_event = pending[-1][0] if pending else math.inf
            next_msg = net.queue[0][0] if net.queue else math.inf
            if next_event <= next_msg:
                now, _, ev = pending.pop()
                self._inject(now, ev)
            else:
                now, _, msg = heapq.heappop(net.queue)
                self._deliver(now, msg)
        return net.transcript

    def _inject(self, now, ev):
        ue = ev["ue"]
        if ev["type"] == "report":
            # step 1: the AP collects the UE's fingerprint
            self.net.send(now, ue, "AP", "OFReport",
                          {"ue": ue, "claimed_id": ev["claimed_id"],
                           "fingerprint": [float(v) for v in _as_fingerprint(ev["fingerprint"]).as_array()]})
        elif ev["type"] == "register":
            fps = [[float(v) for v in _as_fingerprint(f).as_array()] for f in ev["fingerprints"]]
            self.net.send(now, ue, "AP", "RegistrationRequest",
                          {"ue": ue, "new_id": ev["new_id"], "fingerprints": fps})


def validate_scenario(scenario: Mapping) -> list[dict]:
    """Check a scenario script and return its events."""
    if not isinstance(scenario, Mapping) or "events" not in scenario:
        raise ScenarioError("scenario must be a mapping with an 'events' list")
    events = scenario["events"]
    if not isinstance(events, list):
        raise ScenarioError("'events' must be a list")
    required = {"report": ("time", "ue", "claimed_id", "fingerprint"),
                "register": ("time", "ue", "new_id", "fingerprints")}
    out = []
    for n, ev in enumerate(events):
        if not isinstance(ev, Mapping) or ev.get("type") not in required:
            raise ScenarioError(f"event {n}: type must be one of {sorted(required)}")
        missing = [k for k in required[ev["type"]] if k not in ev]
        if missing:
            raise ScenarioError(f"event {n}: missing {', '.join(missing)}")
        extra = set(ev) - set(required[ev["type"]]) - {"type", "note"}
        if extra:
            raise ScenarioError(f"event {n}: unknown key {sorted(extra)[0]!r}")
        try:
            t = float(ev["time"])
        except (TypeError, ValueError):
            raise ScenarioError(f"event {n}: time must be a number") from None
        if not math.isfinite(t) or t < 0:
            raise ScenarioError(f"event {n}: time must be finite and >= 0")
        try:
            if ev["type"] == "report":
                _as_fingerprint(ev["fingerprint"])
            else:
                [_as_fingerprint(f) for f in ev["fingerprints"]]
        except MalformedFingerprint as exc:
            raise ScenarioError(f"event {n}: {exc}") from None
        out.append(dict(ev))
    return out


def run_scenario(db: FingerprintDatabase, scenario: Mapping, latency: float = 1e-3) -> list[AuthMessage]:
    """Execute a scenario script against ``db`` and return the ordered transcript."""
    events = validate_scenario(scenario)
    return ProtocolSimulator(db, latency).run(events)


def enroll(devices, geometries, reps: int, grid, jitter: float, seed: int,
           electronics_gain: float = 1.0, fit_options=None) -> dict[str, list[OpticFingerprint]]:
    """Simulate and fit sweeps for ``devices``; returns their fingerprints by id."""
    from .extract import fingerprint, fit_sweep
    from .synth import simulate_dataset

    data = simulate_dataset(devices, geometries, reps, grid, jitter, seed, electronics_gain)
    out: dict[str, list[OpticFingerprint]] = {d.device_id: [] for d in devices}
    for sweep, label in zip(data.sweeps, data.labels):
        fit = fit_sweep(sweep, fit_options)
        if fit.converged:
            out[label].append(fingerprint(fit))
    return out
