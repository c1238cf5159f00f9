"""Per-class accuracy, confusion matrices and inference timing."""

import csv
import os
import statistics
import time
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_info

from . import model
from .data import CLASS_NAMES, eval_batches
from .errors import DatasetError

# Published per-class accuracies, shown next to our numbers for context only.
# "baseline" is an earlier hand-crafted-feature method on the same data.
TABLE_ORDER = ("yellow", "white", "blue", "cyan", "red", "gray", "black", "green")
REFERENCE_ACCURACY = {
    "rgb": dict(zip(TABLE_ORDER, (0.9794, 0.9666, 0.9410, 0.9645, 0.9897, 0.8608, 0.9738, 0.8257))),
    "hsv": dict(zip(TABLE_ORDER, (0.9450, 0.9624, 0.9576, 0.9716, 0.9866, 0.8503, 0.9703, 0.8215))),
    "lab": dict(zip(TABLE_ORDER, (0.9656, 0.9561, 0.9410, 0.9645, 0.9897, 0.8668, 0.9703, 0.8215))),
    "xyz": dict(zip(TABLE_ORDER, (0.9828, 0.9649, 0.9484, 0.9716, 0.9886, 0.8647, 0.9709, 0.7676))),
    "baseline": dict(zip(TABLE_ORDER, (0.9553, 0.9423, 0.9535, 0.9787, 0.9878, 0.8466, 0.9730, 0.7884))),
}
REFERENCE_AVERAGE = {"rgb": 0.9447, "hsv": 0.9372, "lab": 0.9414, "xyz": 0.9432, "baseline": 0.9282}
REFERENCE_TIMING = {"init_seconds": 4.849, "cpu_exec_seconds": 3.248, "gpu_exec_seconds": 0.156}


@dataclass
class Timing:
    init_seconds: float
    mean_exec_seconds: float
    median_exec_seconds: float
    min_exec_seconds: float
    n_samples: int
    threads: int = 1


@dataclass
class EvalReport:
    per_class_accuracy: np.ndarray
    counts: np.ndarray
    class_names: tuple = CLASS_NAMES
    timing: Timing = None
    extra: dict = field(default_factory=dict)

    @property
    def overall_average(self):
        """Unweighted mean of the per-class accuracies."""
        return float(np.mean(self.per_class_accuracy))

    @property
    def overall_accuracy(self):
        """Fraction of all examples classified correctly (class-size weighted)."""
        return float(np.trace(self.counts) / self.counts.sum())

    @property
    def confusion(self):
        """Row-normalized confusion matrix in percent; row = true class."""
        totals = self.counts.sum(axis=1, keepdims=True)
        return 100.0 * self.counts / np.where(totals > 0, totals, 1)

    @property
    def n_examples(self):
        return int(self.counts.sum())


def confusion_counts(y_true, y_pred, n_classes=len(CLASS_NAMES)):
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (np.asarray(y_true), np.asarray(y_pred)), 1)
    return counts


def report_from_predictions(y_true, y_pred, class_names=CLASS_NAMES):
    y_true = np.asarray(y_true)
    if y_true.size == 0:
        raise DatasetError("cannot evaluate an empty test split")
    counts = confusion_counts(y_true, y_pred, len(class_names))
    totals = counts.sum(axis=1)
    # Classes absent from the test split report accuracy 0.
    acc = np.diag(counts) / np.where(totals > 0, totals, 1)
    return EvalReport(per_class_accuracy=acc, counts=counts, class_names=tuple(class_names))


def predict_logits(state, images, mean_image, batch_size=64):
    crop = state.spec.input_size
    chunks = [
        model.forward(state, b.images, mode="eval")
        for b in eval_batches(images, mean_image, crop, batch_size)
    ]
    return np.concatenate(chunks, axis=0)


def evaluate(state, images, mean_image, batch_size=64):
    """Centre-crop, eval-mode predictions over a held-out :class:`ImageSet`."""
    if len(images) == 0:
        raise DatasetError("cannot evaluate an empty test split")
    pred = predict_logits(state, images, mean_image, batch_size).argmax(axis=1)
    return report_from_predictions(images.labels, pred)


# ------------------------------------------------------------------ timing


def _threads():
    pools = threadpool_info()
    return max((pool["num_threads"] for pool in pools), default=1)


def time_repeated(fn, repetitions):
    """Per-call wall-clock seconds; the first call is dropped when repetitions > 3."""
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    samples = []
    for _ in range(repetitions):
        start = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - start)
    if repetitions > 3:
        samples = samples[1:]
    return samples


def bench_inference(load, image_batch, repetitions=10):
    """Time model initialisation once, then single-image eval forwards.

    ``load`` is a zero-argument callable returning ``(state, mean_image)``;
    its wall-clock time is the initialisation time. ``image_batch`` is a
    (1, 3, S, S) mean-subtracted input or a callable building one from the
    loaded mean image.
    """
    start = time.perf_counter()
    state, mean_image = load()
    init_seconds = time.perf_counter() - start
    x = image_batch(mean_image) if callable(image_batch) else image_batch
    samples = time_repeated(lambda: model.forward(state, x, mode="eval"), repetitions)
    return Timing(
        init_seconds=init_seconds,
        mean_exec_seconds=statistics.fmean(samples),
        median_exec_seconds=statistics.median(samples),
        min_exec_seconds=min(samples),
        n_samples=len(samples),
        threads=_threads(),
    )


# ----------------------------------------------------------------- output


def format_table(report, color_space="rgb"):
    """Per-class table with the published figures alongside (reference only)."""
    ref = REFERENCE_ACCURACY.get(color_space, {})
    base = REFERENCE_ACCURACY["baseline"]
    acc = dict(zip(report.class_names, report.per_class_accuracy))
    totals = dict(zip(report.class_names, report.counts.sum(axis=1)))
    lines = [
        f"{'class':>8} | {'n':>6} | {'ours':>7} | {'ref ' + color_space:>9} | {'ref base':>8}",
        "-" * 50,
    ]
    order = [c for c in TABLE_ORDER if c in acc] + [c for c in report.class_names if c not in TABLE_ORDER]
    for name in order:
        lines.append(
            f"{name:>8} | {totals[name]:>6d} | {acc[name]:7.4f} | "
            f"{_fmt(ref.get(name)):>9} | {_fmt(base.get(name)):>8}"
        )
    lines.append("-" * 50)
    lines.append(
        f"{'average':>8} | {report.n_examples:>6d} | {report.overall_accuracy:7.4f} | "
        f"{_fmt(REFERENCE_AVERAGE.get(color_space)):>9} | {_fmt(REFERENCE_AVERAGE['baseline']):>8}"
    )
    lines.append(f"mean per-class accuracy (unweighted): {report.overall_average:.4f}")
    lines.append("reference columns are published values, not assertions")
    return "\n".join(lines)


def _fmt(value):
    return "-" if value is None else f"{value:.4f}"


def format_timing(timing):
    lines = [
        f"{'':>20} | {'ours (CPU)':>12} | {'ref CPU 1 core':>14}",
        f"{'Initialization time':>20} | {timing.init_seconds:>10.3f} s | "
        f"{REFERENCE_TIMING['init_seconds']:>12.3f} s",
        f"{'Execution time':>20} | {timing.mean_exec_seconds:>10.3f} s | "
        f"{REFERENCE_TIMING['cpu_exec_seconds']:>12.3f} s",
        f"median {timing.median_exec_seconds:.4f} s, min {timing.min_exec_seconds:.4f} s, "
        f"{timing.n_samples} timed runs, {timing.threads} thread(s); hardware differs, no tolerance",
    ]
    return "\n".join(lines)


def write_csv(report, per_class_path, confusion_path):
    with open(per_class_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class", "n", "accuracy"])
        for name, n, acc in zip(
            report.class_names, report.counts.sum(axis=1), report.per_class_accuracy
        ):
            writer.writerow([name, int(n), f"{acc:.6f}"])
        writer.writerow(["average_overall", report.n_examples, f"{report.overall_accuracy:.6f}"])
        writer.writerow(["average_per_class", report.n_examples, f"{report.overall_average:.6f}"])
    with open(confusion_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["true\\pred", *report.class_names])
        for name, row in zip(report.class_names, report.confusion):
            writer.writerow([name, *(f"{v:.4f}" for v in row)])


def confusion_heatmap(report, cell=24):
    """(3, H, W) uint8 heatmap: white at 0%, dark blue at 100%."""
    pct = report.confusion / 100.0
    k = pct.shape[0]
    grid = np.kron(pct, np.ones((cell, cell)))
    white = np.array([255.0, 255.0, 255.0])[:, None, None]
    dark = np.array([8.0, 48.0, 107.0])[:, None, None]
    img = white + (dark - white) * grid[None]
    # One-pixel grey grid lines between cells.
    for i in range(1, k):
        img[:, i * cell, :] = 160
        img[:, :, i * cell] = 160
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def write_report(report, out_dir, color_space="rgb"):
    from .ppm import write_ppm

    os.makedirs(out_dir, exist_ok=True)
    write_csv(
        report,
        os.path.join(out_dir, "per_class_accuracy.csv"),
        os.path.join(out_dir, "confusion_percent.csv"),
    )
    write_ppm(os.path.join(out_dir, "confusion.ppm"), confusion_heatmap(report))
    with open(os.path.join(out_dir, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write(format_table(report, color_space) + "\n")
