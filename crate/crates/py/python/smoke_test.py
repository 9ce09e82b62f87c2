"""Smoke test for the mlagru_py extension.

Build first, e.g. `maturin develop -m crates/py/Cargo.toml`, or copy
target/<profile>/libmlagru_py.so next to this script as mlagru_py.so.
"""

import os
import socket
import struct
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import mlagru_py as m


def check(cond, what):
    if not cond:
        raise SystemExit(f"FAIL: {what}")
    print(f"ok   {what}")


def main():
    check(m.FEATURE_DIM == 1662 and m.TIMESTEPS == 30 and m.NUM_CLASSES == 21, "layout constants")
    check(m.LEFT_HAND == (132, 195) and m.FACE == (258, 1662), "block offsets")

    names = m.class_names()
    check(len(names) == 21 and names[0] == "High-Do", "class table")
    pairs = m.parse_class_manifest(m.class_manifest("sounds"))
    check([n for n, _ in pairs] == names and pairs[0][1].endswith("High-Do.wav"), "class manifest round trip")

    hello = m.encode_hello()
    check(hello == struct.pack("<IBHII", 10, 0, 1, 1662, 30), "HELLO bytes")
    frame = m.encode_frame(42, [0.5] * 1662)
    msgs, used = m.decode_messages(frame + hello[:3])
    check(used == len(frame) and msgs[0]["type"] == "frame" and msgs[0]["timestamp_us"] == 42, "frame decode, partial tail kept")
    ev = {"type": "event", "timestamp_us": 7, "class_index": 3, "confidence": 0.75,
          "class_name": "High-Re", "audio_path": "sounds/High-Re.wav"}
    msgs, _ = m.decode_messages(m.encode_message(ev))
    check(msgs[0] == ev, "event round trip")

    with tempfile.TemporaryDirectory() as tmp:
        data = os.path.join(tmp, "data.gld")
        check(m.synth_dataset(data, per_class=2, noise=0.02, seed=7) == 42, "synthetic dataset")
        samples = m.load_dataset(data)
        raw = open(data, "rb").read()
        check(m.encode_dataset([(l, f) for l, f in samples]) == raw, "GLD1 save/load/save identical")
        bad = bytearray(raw)
        bad[100] ^= 0xFF
        try:
            m.decode_dataset(bytes(bad))
            check(False, "corrupt GLD1 rejected")
        except ValueError:
            check(True, "corrupt GLD1 rejected")

        model = m.Classifier.new("mla-gru", seed=1)
        check(model.num_params == 544149, "parameter count")
        p = model.predict(samples[0][1])
        check(abs(sum(p["probabilities"]) - 1) < 1e-5 and len(p["attention"]) == 30, "prediction")

        engine = m.Engine(model, threshold=0.0, stride=30)
        events = [e for e in (engine.push(f) for _, s in samples[:3] for f in s) if e]
        check(len(events) == 3 and engine.stats()["predictions"] == 3, "engine cadence")

        code, out = m.run_cli(["train", "--epochs", "0", "--data", data])
        check(code == 2, "CLI usage error exit code")
        code, out = m.run_cli(["classes", "--out", os.path.join(tmp, "classes.tsv")])
        rows = [l for l in out.splitlines() if l and not l.startswith("#")]
        check(code == 0 and len(rows) == 21, "CLI classes")

    print("all smoke checks passed")


if __name__ == "__main__":
    main()
