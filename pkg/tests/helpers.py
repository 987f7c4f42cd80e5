"""Shared generators and brute-force oracles for the test suite."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np
from PIL import Image

from bevcv.cli import main
from bevcv.data import write_embeddings, write_weights
from bevcv.geometry import (BevGridSpec, CameraIntrinsics, build_depth_partition, build_resample_map,
                            column_to_azimuth)


@dataclass
class GeometryCase:
    intr: CameraIntrinsics
    grid: BevGridSpec
    part: object
    rmap: object
    dims: list
    c_in: int

    def random_pyramid(self, rng):
        return [rng.standard_normal((self.c_in, h, w)) for h, w in self.dims]

    def random_collapse(self, rng):
        return [rng.standard_normal((self.grid.channels * d, self.c_in * h))
                for d, (h, _) in zip(self.rmap.depth_bins, self.dims)]


def random_geometry(rng) -> GeometryCase:
    """A random small camera, grid and pyramid that admits a valid partition."""
    n = int(rng.integers(1, 5))
    image_w = int(rng.integers(16, 96))
    intr = CameraIntrinsics(focal_px=float(rng.uniform(0.3, 2.0) * image_w),
                            cx=float(rng.uniform(0.2, 0.8) * (image_w - 1)), cy=float(image_w / 2 - 0.5),
                            image_w=image_w, image_h=image_w)
    grid = BevGridSpec(cells_x=int(rng.integers(4, 40)), cells_z=int(rng.integers(1 << (n - 1), 40)),
                       resolution_m=float(rng.uniform(0.1, 1.5)), z_min_m=float(rng.uniform(0.0, 3.0)),
                       channels=int(rng.integers(1, 5)))
    part = build_depth_partition(intr, grid, n)
    dims = []
    for i in range(n):
        w = max(1, image_w >> (n - i + 1))
        dims.append((int(rng.integers(1, 6)), w))
    rmap = build_resample_map(intr, grid, part, dims)
    return GeometryCase(intr, grid, part, rmap, dims, int(rng.integers(1, 4)))


def level_column_azimuth(intr, width: int, c: float) -> float:
    """Azimuth of fractional column ``c`` of a level ``width`` columns wide."""
    u = (c + 0.5) * intr.image_w / width - 0.5
    return column_to_azimuth(intr, u)


def cell_azimuth(grid, iz, ix) -> float:
    x = (ix - grid.cells_x / 2.0) * grid.resolution_m
    z = grid.z_min_m + iz * grid.resolution_m
    return math.atan2(x, z)


def conv2d_loops(x, w, b=None, stride=1, pad=0):
    """Nested-loop cross-correlation oracle."""
    c_in, h, wd = x.shape
    c_out, _, k, _ = w.shape
    xp = np.zeros((c_in, h + 2 * pad, wd + 2 * pad))
    xp[:, pad:pad + h, pad:pad + wd] = x
    oh = (h + 2 * pad - k) // stride + 1
    ow = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((c_out, oh, ow))
    for o in range(c_out):
        for i in range(oh):
            for j in range(ow):
                acc = 0.0
                for c in range(c_in):
                    for a in range(k):
                        for bb in range(k):
                            acc += xp[c, i * stride + a, j * stride + bb] * w[o, c, a, bb]
                out[o, i, j] = acc + (b[o] if b is not None else 0.0)
    return out


def deconv_loops(x, w, stride):
    """Scatter-add transposed convolution oracle; ``w`` is (C_in, C_out, k, k)."""
    c_in, h, wd = x.shape
    _, c_out, k, _ = w.shape
    out = np.zeros((c_out, (h - 1) * stride + k, (wd - 1) * stride + k))
    for c in range(c_in):
        for i in range(h):
            for j in range(wd):
                for o in range(c_out):
                    for a in range(k):
                        for bb in range(k):
                            out[o, i * stride + a, j * stride + bb] += x[c, i, j] * w[c, o, a, bb]
    return out


def central_difference(f, x, eps=1e-6):
    """Numerical gradient of scalar ``f`` at float64 array ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + eps
        fp = f(x)
        x[idx] = old - eps
        fm = f(x)
        x[idx] = old
        g[idx] = (fp - fm) / (2 * eps)
    return g


def rel_err(a, b, atol: float = 1e-9) -> float:
    """Max abs difference relative to the larger array's max magnitude.

    Differences below ``atol`` count as zero so that identically-zero
    gradients compare equal to their round-off numerical estimates.
    """
    a = np.asarray(a, np.float64)
    b = np.asarray(b, np.float64)
    diff = np.abs(a - b).max(initial=0.0)
    if diff < atol:
        return 0.0
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-12)
    return float(diff / scale)


def make_scene(root):
    """Two random panoramas with aerial tiles and a manifest beside them."""
    rng = np.random.default_rng(0)
    lines = []
    for i in range(2):
        Image.fromarray(rng.integers(0, 256, (48, 192, 3), dtype=np.uint8)).save(root / f"p{i}.png")
        Image.fromarray(rng.integers(0, 256, (224, 224, 3), dtype=np.uint8)).save(root / f"a{i}.png")
        lines.append(json.dumps({"id": i + 1, "pov": f"p{i}.png", "aerial": f"a{i}.png", "yaw_deg": 40.0 * i}))
    (root / "m.jsonl").write_text("\n".join(lines) + "\n")
    return root


def bevcv(*argv):
    return main([str(a) for a in argv])


def snapshot(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def timing_free(csv_bytes):
    # benchmark latencies are measurements; only the run layout is deterministic
    return [row[:4] for row in csv.reader(csv_bytes.decode().splitlines())]


def run_every_subcommand(scene, out, capsys):
    """Run each subcommand once into ``out``; returns captured stdout per command."""
    out.mkdir()
    (out / "c.json").write_text('{"trainer": {"epochs": 3}}')
    rng = np.random.default_rng(5)
    v = rng.standard_normal((300, 16))
    write_embeddings(out / "raw.bevc", range(300), (v / np.linalg.norm(v, axis=1, keepdims=True)).astype(np.float32))
    write_weights(out / "pairs.bvwt", {"pov": rng.standard_normal((8, 512)), "aerial": rng.standard_normal((8, 2048))})
    m = scene / "m.jsonl"
    cmds = {
        "crop": ["crop", "--manifest", m, "--out", out / "crops", "--size", 24],
        "init-weights": ["init-weights", "--seed", 3, "--out", out / "w.bvwt"],
        "embed-pov": ["embed", "--manifest", m, "--weights", out / "w.bvwt", "--branch", "pov",
                      "--out", out / "pov.bevc", "--jobs", 2],
        "embed-aerial": ["embed", "--manifest", m, "--weights", out / "w.bvwt", "--branch", "aerial",
                         "--out", out / "aer.bevc"],
        "build-index": ["build-index", out / "raw.bevc", "--out", out / "idx.bevc"],
        "query": ["query", out / "idx.bevc", out / "raw.bevc", "--k", 3, "--out", out / "q.csv"],
        "evaluate": ["evaluate", out / "aer.bevc", out / "pov.bevc", "--out", out / "eval.csv"],
        "train-head": ["train-head", out / "pairs.bvwt", "--seed", 2, "--config", out / "c.json",
                       "--out", out / "heads.bvwt", "--loss-csv", out / "loss.csv"],
        "sweep-offset": ["sweep-offset", "--seed", 1, "--config", out / "c.json", "--yaw-offset", 0,
                         "--yaw-offset", 25, "--out", out / "sweep.csv"],
        "report-complexity": ["report-complexity", "--out", out / "cx.csv"],
        "benchmark": ["benchmark", "--seed", 4, "--dims", 8, "--sizes", 50, 100, "--queries", 3,
                      "--repeats", 1, "--out", out / "bench.csv"],
        "config": ["config", "--config", out / "c.json"],
        "version": ["version"],
    }
    stdout = {}
    for name, argv in cmds.items():
        assert bevcv(*argv) == 0, name
        stdout[name] = capsys.readouterr().out
    return stdout


def assert_runs_identical(root_a, root_b, out_a, out_b):
    """Byte equality of two ``run_every_subcommand`` trees, timings aside."""
    files_a, files_b = snapshot(root_a), snapshot(root_b)
    assert sorted(files_a) == sorted(files_b)
    differing = [n for n in files_a if n not in ("bench.csv", "bench.png") and files_a[n] != files_b[n]]
    assert not differing, f"outputs differ across runs: {differing}"
    assert timing_free(files_a["bench.csv"]) == timing_free(files_b["bench.csv"])
    stdout_diff = [n for n in out_a if n != "benchmark"
                   and out_a[n].replace(str(root_a), str(root_b)) != out_b[n]]
    assert not stdout_diff, f"stdout differs across runs: {stdout_diff}"
    return len(files_a)
