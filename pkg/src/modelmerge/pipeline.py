"""Streaming merge orchestration: bounded-memory tensor pipeline, inspection
and diff utilities backing the CLI.

Tensors are merged by a worker pool and written strictly in lexicographic
order. A job holds float32 workspaces only while it runs, and at most
2 x threads jobs are in flight, so resident tensor data stays bounded by a
small constant number of tensors regardless of model size.
"""

from __future__ import annotations

import itertools
import os
import tempfile
import threading
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .checkpoint import _encode_header, open_reader
from .dtypes import ITEMSIZE, decode_to_f32, encode_from_f32
from .errors import CompatibilityError
from .hierarchical import LayerWeightReport, merge_tensor_hierarchical
from .kernels import merge_tensor_elementwise
from .recipe import RecipeFile, load_recipe


class WorkspaceTracker:
    """Counts live per-tensor float32 workspaces, attributed to worker threads.

    Install via run_merge(instrument=...) to assert the streaming bound.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._live_per_worker: dict[int, int] = {}
        self._live_total = 0
        self.max_per_worker = 0
        self.max_total = 0

    def alloc(self, worker_id: int, name: str) -> None:
        with self._lock:
            count = self._live_per_worker.get(worker_id, 0) + 1
            self._live_per_worker[worker_id] = count
            self._live_total += 1
            self.max_per_worker = max(self.max_per_worker, count)
            self.max_total = max(self.max_total, self._live_total)

    def free(self, worker_id: int, name: str) -> None:
        with self._lock:
            self._live_per_worker[worker_id] -= 1
            self._live_total -= 1


@dataclass
class MergeResult:
    output: Path
    method: str
    tensors: int
    timings: dict[str, float] = field(default_factory=dict)
    reports: list[LayerWeightReport] = field(default_factory=list)


def _check_reader_compat(base, other, label: str) -> None:
    base_names = set(base.names())
    other_names = set(other.names())
    if base_names != other_names:
        only_base = sorted(base_names - other_names)
        only_other = sorted(other_names - base_names)
        raise CompatibilityError(
            f"tensor sets differ between base and {label}: "
            f"missing from {label}: {only_base}; extra in {label}: {only_other}"
        )
    for name in sorted(base_names):
        if base.shape(name) != other.shape(name):
            raise CompatibilityError(
                f"tensor {name!r}: shape {base.shape(name)} in base vs "
                f"{other.shape(name)} in {label}"
            )


def run_merge(recipe_file, threads: int = 1, report_path=None,
              instrument: WorkspaceTracker | None = None) -> MergeResult:
    """Execute a parsed recipe (or recipe path). Returns timings and reports.

    The output archive is written to a temporary file and atomically renamed;
    recipe or compatibility failures leave no partial output behind.
    """
    if not isinstance(recipe_file, RecipeFile):
        recipe_file = load_recipe(recipe_file)
    recipe = recipe_file.recipe
    threads = max(1, int(threads))
    t0 = time.perf_counter()

    with open_reader(recipe_file.base) as base_r, \
            open_reader(recipe_file.parent_a) as a_r, \
            open_reader(recipe_file.parent_b) as b_r:
        _check_reader_compat(base_r, a_r, "parent_a")
        _check_reader_compat(base_r, b_r, "parent_b")
        names = base_r.names()
        out_dtypes = {n: recipe.output_dtype or a_r.dtype(n) for n in names}
        t_load = time.perf_counter() - t0

        header, _ = _encode_header(
            names,
            out_dtypes,
            {n: base_r.shape(n) for n in names},
            {n: base_r.num_elements(n) * ITEMSIZE[out_dtypes[n]] for n in names},
            base_r.metadata,
        )

        def job(name: str):
            worker = threading.get_ident()
            if instrument is not None:
                instrument.alloc(worker, name)
            try:
                base32 = _read_f32(base_r, name)
                a32 = _read_f32(a_r, name)
                b32 = _read_f32(b_r, name)
                if recipe.method == "hierarchical":
                    merged, row = merge_tensor_hierarchical(name, base32, a32, b32, recipe)
                else:
                    merged = merge_tensor_elementwise(
                        recipe.method, name, base32, a32, b32,
                        alpha=recipe.alpha, density=recipe.density,
                        epsilon=recipe.epsilon, gamma=recipe.gamma, seed=recipe.seed,
                    )
                    row = None
                return encode_from_f32(merged, out_dtypes[name]), row
            finally:
                if instrument is not None:
                    instrument.free(worker, name)

        t1 = time.perf_counter()
        output = Path(recipe_file.output)
        reports: list[LayerWeightReport] = []
        tmp_fd, tmp_name = tempfile.mkstemp(dir=output.parent, prefix=f".{output.name}.")
        try:
            with os.fdopen(tmp_fd, "wb") as fh:
                fh.write(len(header).to_bytes(8, "little"))
                fh.write(header)
                window = threads * 2
                name_iter = iter(names)
                with ThreadPoolExecutor(max_workers=threads) as pool:
                    pending = deque(
                        (ex_name, pool.submit(job, ex_name))
                        for ex_name in itertools.islice(name_iter, window)
                    )
                    while pending:
                        _, fut = pending.popleft()
                        data, row = fut.result()
                        fh.write(data)
                        if row is not None:
                            reports.append(row)
                        nxt = next(name_iter, None)
                        if nxt is not None:
                            pending.append((nxt, pool.submit(job, nxt)))
            os.replace(tmp_name, output)
        except BaseException:
            try:
                os.unlink(tmp_name)
            except OSError:
                pass
            raise
        t_merge = time.perf_counter() - t1

    report_target = report_path or recipe_file.report
    if report_target and recipe.method == "hierarchical":
        from .report import write_report
        write_report(reports, report_target)

    return MergeResult(
        output=output,
        method=recipe.method,
        tensors=len(names),
        timings={"load": t_load, "merge+write": t_merge,
                 "total": time.perf_counter() - t0},
        reports=reports,
    )


def _read_f32(reader, name: str):
    rec = reader.read(name)
    return decode_to_f32(rec.data, rec.dtype).reshape(rec.shape)


def inspect_checkpoint(path) -> str:
    """Human-readable summary: counts, per-dtype totals, first/last names."""
    with open_reader(path) as reader:
        names = reader.names()
        total_params = sum(reader.num_elements(n) for n in names)
        by_dtype: dict[str, list[int]] = {}
        for n in names:
            entry = by_dtype.setdefault(reader.dtype(n), [0, 0])
            entry[0] += 1
            entry[1] += reader.num_elements(n)
        lines = [f"{len(names)} tensors, {total_params} parameters"]
        for dtype in sorted(by_dtype):
            count, params = by_dtype[dtype]
            lines.append(f"  {dtype}: {count} tensors, {params} parameters")
        if names:
            lines.append(f"first: {names[0]}")
            lines.append(f"last: {names[-1]}")
        return "\n".join(lines)


def diff_checkpoints(path_a, path_b, tolerance: float = 0.0):
    """Per-tensor max-abs difference in the float32 workspace.

    Returns (lines, global_max, exit_code): 0 when global_max <= tolerance,
    3 otherwise.
    """
    with open_reader(path_a) as ra, open_reader(path_b) as rb:
        _check_reader_compat(ra, rb, "b")
        lines = []
        global_max = 0.0
        for name in ra.names():
            va = _read_f32(ra, name).astype("float64")
            vb = _read_f32(rb, name).astype("float64")
            worst = float(abs(va - vb).max()) if va.size else 0.0
            global_max = max(global_max, worst)
            lines.append(f"{name}\t{worst:.9g}")
        lines.append(f"GLOBAL\t{global_max:.9g}")
        return lines, global_max, 0 if global_max <= tolerance else 3
