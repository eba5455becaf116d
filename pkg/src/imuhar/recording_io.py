"""Recording and label file formats.

Binary container (``.imurec``)::

    b"IMUREC01"                 magic
    uint32 LE                   header length in bytes
    header                      UTF-8 JSON: sensor_count, rate, channels, units, n_packets
    n_packets records           struct "<B4d24f": sensor_id, 4 timestamps, 4x6 samples

Text form (``.csv``): ``#`` lines carry ``key=value`` header entries, every
other line is one packet ``sensor_id,t0,t1,t2,t3,s0,...,s23`` with the 24
samples in sample-major order (4 samples of 6 channels).

Label files hold one integer class (0-6) per line, one line per frame.
"""
from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .preprocess import (
    CHANNELS_PER_SENSOR,
    N_SENSORS,
    RATE_HZ,
    SAMPLES_PER_PACKET,
    RawRecording,
    SensorStream,
)

MAGIC = b"IMUREC01"
RECORD = struct.Struct("<B4d24f")
_RECORD_DTYPE = np.dtype([("sensor", "u1"), ("t", "<f8", (4,)), ("x", "<f4", (24,))])
SENSOR_CHANNELS = ("ax", "ay", "az", "gx", "gy", "gz")
SENSOR_UNITS = ("g", "g", "g", "deg/s", "deg/s", "deg/s")


class RecordingFormatError(ValueError):
    pass


def _header(rec: RawRecording, n_packets: int) -> dict:
    return {
        "sensor_count": N_SENSORS,
        "rate": rec.rate,
        "channels": list(SENSOR_CHANNELS),
        "units": list(SENSOR_UNITS),
        "samples_per_packet": SAMPLES_PER_PACKET,
        "n_packets": n_packets,
    }


def _records(rec: RawRecording) -> np.ndarray:
    parts = []
    for s, st in enumerate(rec.sensors):
        r = np.zeros(st.n_packets, dtype=_RECORD_DTYPE)
        r["sensor"] = s
        r["t"] = st.timestamps
        r["x"] = st.samples.reshape(st.n_packets, -1)
        parts.append(r)
    return np.concatenate(parts)


def _atomic_write(path: Path, payload: bytes):
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def write_recording(rec: RawRecording, path) -> None:
    path = Path(path)
    recs = _records(rec)
    if path.suffix in (".csv", ".txt"):
        lines = [f"# {k}={json.dumps(v)}" for k, v in _header(rec, len(recs)).items()]
        for r in recs:
            vals = [str(int(r["sensor"]))] + [repr(float(v)) for v in r["t"]] + [repr(float(v)) for v in r["x"]]
            lines.append(",".join(vals))
        _atomic_write(path, ("\n".join(lines) + "\n").encode())
        return
    head = json.dumps(_header(rec, len(recs)), sort_keys=True).encode()
    _atomic_write(path, MAGIC + struct.pack("<I", len(head)) + head + recs.tobytes())


def _build(header: dict, recs: np.ndarray) -> RawRecording:
    if int(header.get("sensor_count", N_SENSORS)) != N_SENSORS:
        raise RecordingFormatError(f"expected {N_SENSORS} sensors, header says {header.get('sensor_count')}")
    sensors = []
    for s in range(N_SENSORS):
        r = recs[recs["sensor"] == s]
        samples = r["x"].reshape(len(r), SAMPLES_PER_PACKET, CHANNELS_PER_SENSOR).astype(np.float64)
        sensors.append(SensorStream(np.array(r["t"], dtype=np.float64), samples))
    if np.any(recs["sensor"] >= N_SENSORS):
        raise RecordingFormatError("record with sensor_id >= 4")
    return RawRecording(sensors, rate=float(header.get("rate", RATE_HZ)), meta={"header": header})


def read_recording(path) -> RawRecording:
    path = Path(path)
    raw = path.read_bytes()
    if raw.startswith(MAGIC):
        (hlen,) = struct.unpack_from("<I", raw, len(MAGIC))
        off = len(MAGIC) + 4
        header = json.loads(raw[off : off + hlen].decode())
        body = raw[off + hlen :]
        if len(body) % RECORD.size:
            raise RecordingFormatError(f"{path}: truncated packet record")
        recs = np.frombuffer(body, dtype=_RECORD_DTYPE)
        if "n_packets" in header and header["n_packets"] != len(recs):
            raise RecordingFormatError(f"{path}: header says {header['n_packets']} packets, found {len(recs)}")
        return _build(header, recs)
    return _read_text(raw.decode(), path)


def _read_text(text: str, path) -> RawRecording:
    header: dict = {}
    rows = []
    for ln, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, val = line[1:].strip().partition("=")
            try:
                header[key.strip()] = json.loads(val)
            except json.JSONDecodeError:
                header[key.strip()] = val.strip()
            continue
        parts = line.split(",")
        if len(parts) != 1 + 4 + 24:
            raise RecordingFormatError(f"{path}:{ln}: expected 29 fields, got {len(parts)}")
        rows.append(parts)
    recs = np.zeros(len(rows), dtype=_RECORD_DTYPE)
    for i, parts in enumerate(rows):
        recs[i]["sensor"] = int(parts[0])
        recs[i]["t"] = [float(v) for v in parts[1:5]]
        recs[i]["x"] = [float(v) for v in parts[5:]]
    return _build(header, recs)


def write_labels(labels, path) -> None:
    labels = np.asarray(labels, dtype=int)
    _atomic_write(Path(path), "".join(f"{int(v)}\n" for v in labels).encode())


def read_labels(path, n_classes: int = 7) -> np.ndarray:
    vals = []
    for ln, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        v = int(line)
        if not 0 <= v < n_classes:
            raise RecordingFormatError(f"{path}:{ln}: label {v} outside 0..{n_classes - 1}")
        vals.append(v)
    return np.array(vals, dtype=np.int64)
