#!/usr/bin/env python3
"""Generate the golden fixtures under crates/its-core/tests/fixtures/.

Two fixture families, both produced by independent NumPy reference
implementations of the conventions the Rust crate commits to:

* CNN: a small random weight file (ITSW container), an input image (ASCII
  PGM), and a JSON record of per-stage activation checksums plus the final
  logits of the noise-free forward pass.
* Warp: an input image, a 3x3 affine transform, and the expected pull-warp
  output (bilinear, zero padding, center-origin coordinates).

Run once from the repository root; outputs are committed. Weights are stored
and rounded to f32 before the reference pass runs, so both sides compute in
f64 from identical f32 inputs.
"""

import json
import struct
from pathlib import Path

import numpy as np
from scipy.special import erf

OUT = Path(__file__).resolve().parent.parent / "crates/its-core/tests/fixtures"
SEED = 12345
SNAP_EPS = 1e-9


# --- shared I/O helpers ---------------------------------------------------

def write_pgm(path: Path, bytes_hw: np.ndarray) -> None:
    h, w = bytes_hw.shape
    lines = [f"P2\n{w} {h}\n255"]
    for row in bytes_hw:
        lines.append(" ".join(str(int(v)) for v in row))
    path.write_text("\n".join(lines) + "\n")


def quantize(img: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1] and round half away from zero, like Image::to_u8."""
    return np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_itsw(path: Path, tensors: list[tuple[str, np.ndarray]]) -> None:
    with open(path, "wb") as f:
        f.write(b"ITSW")
        f.write(struct.pack("<I", 1))               # version
        f.write(struct.pack("<I", len(tensors)))    # tensor count
        for name, arr in tensors:
            encoded = name.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                f.write(struct.pack("<I", dim))
            f.write(struct.pack("<B", 0))           # dtype 0 = f32
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


# --- CNN reference forward pass -------------------------------------------

def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def conv_valid(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    out_ch, in_ch, k, _ = w.shape
    oh, ow = x.shape[1] - k + 1, x.shape[2] - k + 1
    out = np.zeros((out_ch, oh, ow))
    for o in range(out_ch):
        acc = np.full((oh, ow), b[o])
        for c in range(in_ch):
            for kr in range(k):
                for kc in range(k):
                    acc = acc + w[o, c, kr, kc] * x[c, kr:kr + oh, kc:kc + ow]
        out[o] = acc
    return out


def maxpool2(x: np.ndarray) -> np.ndarray:
    c, h, w = x.shape
    return x.reshape(c, h // 2, 2, w // 2, 2).max(axis=(2, 4))


def gen_cnn(rng: np.random.Generator) -> None:
    k, chans, hidden, classes = 5, (4, 8, 8), 32, 3
    side = 32  # 32 -> 28 -> 24 -> pool 12 -> 8 -> pool 4; fc1 fan-in 8*4*4

    def uniform_f32(shape, fan_in):
        s = np.sqrt(3.0 / fan_in)
        return rng.uniform(-s, s, size=shape).astype(np.float32)

    tensors = [
        ("conv1.weight", uniform_f32((chans[0], 1, k, k), k * k)),
        ("conv1.bias", rng.uniform(-0.1, 0.1, chans[0]).astype(np.float32)),
        ("conv2.weight", uniform_f32((chans[1], chans[0], k, k), chans[0] * k * k)),
        ("conv2.bias", rng.uniform(-0.1, 0.1, chans[1]).astype(np.float32)),
        ("conv3.weight", uniform_f32((chans[2], chans[1], k, k), chans[1] * k * k)),
        ("conv3.bias", rng.uniform(-0.1, 0.1, chans[2]).astype(np.float32)),
        ("fc1.weight", uniform_f32((hidden, chans[2] * 4 * 4), chans[2] * 4 * 4)),
        ("fc1.bias", rng.uniform(-0.1, 0.1, hidden).astype(np.float32)),
        ("fc2.weight", uniform_f32((classes, hidden), hidden)),
        ("fc2.bias", rng.uniform(-0.1, 0.1, classes).astype(np.float32)),
    ]
    write_itsw(OUT / "cnn_small.itsw", tensors)

    input_u8 = rng.integers(0, 256, size=(side, side), dtype=np.uint8)
    write_pgm(OUT / "cnn_input.pgm", input_u8)
    x = (input_u8.astype(np.float64) / 255.0)[np.newaxis, :, :]

    w = {name: arr.astype(np.float64) for name, arr in tensors}
    stages = {}
    a = gelu(conv_valid(x, w["conv1.weight"], w["conv1.bias"]))
    stages["conv1"] = a
    a = gelu(conv_valid(a, w["conv2.weight"], w["conv2.bias"]))
    stages["conv2"] = a
    a = maxpool2(a)
    stages["pool1"] = a
    a = gelu(conv_valid(a, w["conv3.weight"], w["conv3.bias"]))
    stages["conv3"] = a
    a = maxpool2(a)
    stages["pool2"] = a
    hidden_act = gelu(w["fc1.weight"] @ a.ravel() + w["fc1.bias"])
    stages["fc1"] = hidden_act
    logits = w["fc2.weight"] @ hidden_act + w["fc2.bias"]
    stages["logits"] = logits

    golden = {
        "weights": "cnn_small.itsw",
        "input": "cnn_input.pgm",
        "input_size": [side, side, 1],
        "stage_checksums": {name: float(a.sum()) for name, a in stages.items()},
        "logits": [float(v) for v in logits],
    }
    (OUT / "cnn_golden.json").write_text(json.dumps(golden, indent=2) + "\n")
    print(f"cnn fixture: logits {[round(v, 6) for v in logits]}")


# --- warp reference --------------------------------------------------------

def affine_inverse(m: np.ndarray) -> np.ndarray:
    det = m[0][0] * m[1][1] - m[0][1] * m[1][0]
    inv00, inv01 = m[1][1] / det, -m[0][1] / det
    inv10, inv11 = -m[1][0] / det, m[0][0] / det
    tx = -(inv00 * m[0][2] + inv01 * m[1][2])
    ty = -(inv10 * m[0][2] + inv11 * m[1][2])
    return np.array([[inv00, inv01, tx], [inv10, inv11, ty], [0.0, 0.0, 1.0]])


def snap(v: float) -> float:
    r = np.round(v)
    return float(r) if abs(v - r) <= SNAP_EPS else float(v)


def pull_warp(img: np.ndarray, m: np.ndarray) -> np.ndarray:
    h, w = img.shape
    inv = affine_inverse(m)
    out = np.zeros((h, w))
    for r in range(h):
        y = r - (h - 1) * 0.5
        for c in range(w):
            x = c - (w - 1) * 0.5
            xs = inv[0][0] * x + inv[0][1] * y + inv[0][2]
            ys = inv[1][0] * x + inv[1][1] * y + inv[1][2]
            gc = snap(xs + (w - 1) * 0.5)
            gr = snap(ys + (h - 1) * 0.5)
            r0, c0 = int(np.floor(gr)), int(np.floor(gc))
            fr, fc = gr - r0, gc - c0
            acc = 0.0
            for (rr, cc, wgt) in [
                (r0, c0, (1 - fr) * (1 - fc)),
                (r0, c0 + 1, (1 - fr) * fc),
                (r0 + 1, c0, fr * (1 - fc)),
                (r0 + 1, c0 + 1, fr * fc),
            ]:
                if wgt != 0.0 and 0 <= rr < h and 0 <= cc < w:
                    acc += wgt * img[rr, cc]
            out[r, c] = acc
    return out


def gen_warp(rng: np.random.Generator) -> None:
    side = 32
    input_u8 = rng.integers(0, 256, size=(side, side), dtype=np.uint8)
    write_pgm(OUT / "warp_input.pgm", input_u8)
    img = input_u8.astype(np.float64) / 255.0

    theta, log_scale, shear = 0.35, 0.08, 0.12
    rot = np.array([
        [np.cos(theta), -np.sin(theta), 0.0],
        [np.sin(theta), np.cos(theta), 0.0],
        [0.0, 0.0, 1.0],
    ])
    scale = np.diag([np.exp(log_scale), np.exp(log_scale), 1.0])
    shear_x = np.array([[1.0, shear, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    translate = np.array([[1.0, 0.0, 0.6], [0.0, 1.0, -0.4], [0.0, 0.0, 1.0]])
    m = rot @ scale @ shear_x @ translate

    expected = pull_warp(img, m)
    write_pgm(OUT / "warp_expected.pgm", quantize(expected))
    record = {
        "input": "warp_input.pgm",
        "expected": "warp_expected.pgm",
        "matrix": [[float(v) for v in row] for row in m],
    }
    (OUT / "warp_transform.json").write_text(json.dumps(record, indent=2) + "\n")
    print(f"warp fixture: matrix row 0 {[round(v, 6) for v in m[0]]}")


if __name__ == "__main__":
    OUT.mkdir(parents=True, exist_ok=True)
    gen_cnn(np.random.default_rng(SEED))
    gen_warp(np.random.default_rng(SEED + 1))
    print(f"fixtures written to {OUT}")
