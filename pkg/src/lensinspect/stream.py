"""Conveyor-stream simulation.

Frames arrive on a fixed clock (target FPS). Three pipeline stages
(preprocess, inference, postprocess) run on their own threads with
single-slot hand-off queues, so consecutive frames overlap across
stages. When the pipeline is still busy as a new frame arrives, that
frame is dropped (camera-like: newest lost, memory bounded). Results
keep frame order; per-stage wall times are recorded per frame.
"""

from __future__ import annotations

import csv
import io
import queue
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import DataError, load_image


@dataclass
class StageTimings:
    """Per-stage milliseconds plus achieved frames per second."""

    preprocess_ms: float
    inference_ms: float
    postprocess_ms: float
    fps: float


@dataclass
class FrameRecord:
    index: int
    name: str
    preprocess_ms: float
    inference_ms: float
    postprocess_ms: float
    detections: list


@dataclass
class StreamSummary:
    frames_total: int
    frames_processed: int
    frames_dropped: int
    frames_failed: int
    wall_seconds: float
    mean: StageTimings
    p50: tuple[float, float, float]
    p95: tuple[float, float, float]
    records: list[FrameRecord] = field(default_factory=list)
    failures: list[str] = field(default_factory=list)

    def format_stage_line(self) -> str:
        return (f"preprocess {self.mean.preprocess_ms:.1f}ms, "
                f"inference {self.mean.inference_ms:.1f}ms, "
                f"postprocess {self.mean.postprocess_ms:.1f}ms")

    def timings_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["frame", "name", "preprocess_ms", "inference_ms",
                         "postprocess_ms", "detections"])
        for r in self.records:
            writer.writerow([r.index, r.name, f"{r.preprocess_ms:.3f}",
                             f"{r.inference_ms:.3f}", f"{r.postprocess_ms:.3f}",
                             len(r.detections)])
        return buf.getvalue()


def _percentiles(values, q):
    if not values:
        return 0.0
    return float(np.percentile(np.asarray(values), q))


def run_stream(paths, detector, target_fps: float, loader=load_image) -> StreamSummary:
    """Replay `paths` as a conveyor feed at `target_fps` through `detector`."""
    paths = list(paths)
    if not paths:
        raise DataError("stream: no frames to process")
    if target_fps <= 0:
        raise ValueError(f"target_fps must be positive, got {target_fps}")

    pre_q: queue.Queue = queue.Queue(maxsize=1)
    inf_q: queue.Queue = queue.Queue(maxsize=1)
    post_q: queue.Queue = queue.Queue(maxsize=1)
    records: list[FrameRecord] = []
    failures: list[str] = []

    def preprocess_worker():
        while True:
            item = pre_q.get()
            if item is None:
                inf_q.put(None)
                return
            index, path = item
            try:
                t0 = time.perf_counter()
                image = loader(path)
                x, transform = detector.preprocess(image)
                pre_ms = (time.perf_counter() - t0) * 1e3
            except Exception as exc:  # bad frame: report, keep streaming
                failures.append(f"{path}: {exc}")
                continue
            inf_q.put((index, path, x, transform, pre_ms))

    def inference_worker():
        while True:
            item = inf_q.get()
            if item is None:
                post_q.put(None)
                return
            index, path, x, transform, pre_ms = item
            t0 = time.perf_counter()
            pyramid = detector.infer(x)
            inf_ms = (time.perf_counter() - t0) * 1e3
            post_q.put((index, path, pyramid, transform, pre_ms, inf_ms))

    def postprocess_worker():
        while True:
            item = post_q.get()
            if item is None:
                return
            index, path, pyramid, transform, pre_ms, inf_ms = item
            t0 = time.perf_counter()
            detections = detector.postprocess(pyramid, transform)
            post_ms = (time.perf_counter() - t0) * 1e3
            records.append(FrameRecord(index, Path(str(path)).name, pre_ms,
                                       inf_ms, post_ms, detections))

    threads = [threading.Thread(target=f, daemon=True)
               for f in (preprocess_worker, inference_worker, postprocess_worker)]
    for t in threads:
        t.start()

    dropped = 0
    start = time.perf_counter()
    for index, path in enumerate(paths):
        arrival = start + index / target_fps
        now = time.perf_counter()
        if now < arrival:
            time.sleep(arrival - now)
        try:
            pre_q.put_nowait((index, path))
        except queue.Full:
            dropped += 1
    pre_q.put(None)
    for t in threads:
        t.join()
    wall = time.perf_counter() - start

    pre = [r.preprocess_ms for r in records]
    inf = [r.inference_ms for r in records]
    post = [r.postprocess_ms for r in records]
    mean = StageTimings(
        preprocess_ms=float(np.mean(pre)) if pre else 0.0,
        inference_ms=float(np.mean(inf)) if inf else 0.0,
        postprocess_ms=float(np.mean(post)) if post else 0.0,
        fps=len(records) / wall if wall > 0 else 0.0,
    )
    return StreamSummary(
        frames_total=len(paths),
        frames_processed=len(records),
        frames_dropped=dropped,
        frames_failed=len(failures),
        wall_seconds=wall,
        mean=mean,
        p50=(_percentiles(pre, 50), _percentiles(inf, 50), _percentiles(post, 50)),
        p95=(_percentiles(pre, 95), _percentiles(inf, 95), _percentiles(post, 95)),
        records=records,
        failures=failures,
    )
