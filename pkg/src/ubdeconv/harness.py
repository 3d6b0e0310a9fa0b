"""Experiment plumbing behind the command-line interface.

An experiment directory holds everything one synthetic instance needs:

``truth.npy``, ``observed.npy``
    ``(C, H, W)`` ground truth and observed grid (zeros where unobserved).
``partition.txt`` or ``partition_R.txt`` ...
    Pixel partitions, one per channel.
``meta.json``
    Task, PSF, noise level and the value of ``lambda``.
``reference.npy``, ``reference_state.npz``
    Long-run solution written by :func:`cmd_reference`.
``restored_<solver>.npy``, ``trace_<solver>.csv``
    Outputs of :func:`cmd_solve`.
"""

import csv
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from . import baselines, partial_admm
from ._validation import as_channels
from .framework import framework_run, get_plugin
from .grid_fft import psf_from_spec
from .io import read_partition, read_pnm, write_partition, write_pnm, write_trace
from .metrics import central, isnr, rmse
from .observation import (ObservationModel, bayer_partitions, boundary_partition,
                          decimation_partition, inpaint_partition, synthesize)

TASKS = ("deblur", "inpaint", "superres", "demosaic")
SOLVERS = ("proposed1", "proposedAD", "admm_cg", "cm", "framework")
TASK_LAMBDA = {"deblur": 5e-6, "inpaint": 2e-6, "superres": 2e-4, "demosaic": 1e-5}
DEFAULT_ITERS = {"proposed1": 10_000, "proposedAD": 10_000, "admm_cg": 1000,
                 "cm": 1_000_000, "framework": 80}
# "extend": the input image is the observed m x n field of view and the sharp
# m' x n' grid mirrors b pixels outward; "crop": the input image is the sharp grid
FRAMES = ("extend", "crop")
EXIT_OK = 0
EXIT_DIVERGED = 2
_CHANNELS = "RGB"


@dataclass
class Experiment:
    task: str = "deblur"
    image: Optional[str] = None
    psf: str = "boxcar:13"
    bsnr: float = 50.0
    lam: Optional[float] = None
    solver: str = "proposedAD"
    seed: int = 0
    out: str = "."
    mu0: Optional[float] = None
    t: float = 3.0
    passes: Optional[str] = None
    iters: Optional[int] = None
    stop_rmse: Optional[float] = None
    ratio: int = 3
    holes: Optional[str] = None
    inner_iters: int = 5
    timing: bool = True
    long_iters: int = 100_000
    frame: str = "extend"

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}; choose from {TASKS}")
        if self.solver not in SOLVERS:
            raise ValueError(f"unknown solver {self.solver!r}; choose from {SOLVERS}")
        if self.frame not in FRAMES:
            raise ValueError(f"unknown frame {self.frame!r}; choose from {FRAMES}")
        self.lam_given = self.lam is not None
        if self.lam is None:
            self.lam = TASK_LAMBDA[self.task]
        if not self.lam > 0:
            raise ValueError("lambda must be > 0")
        self.psf_kernel = psf_from_spec(self.psf)

    @classmethod
    def from_mapping(cls, values):
        """Build from string or typed values; unknown keys are rejected."""
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            key = {"lambda": "lam"}.get(key, key)
            if key not in known:
                raise ValueError(f"unknown experiment setting {key!r}")
            kwargs[key] = _coerce(known[key], raw)
        return cls(**kwargs)


def _coerce(f, raw):
    if not isinstance(raw, str) or raw is None:
        return raw
    target = {"bsnr": float, "lam": float, "mu0": float, "t": float, "stop_rmse": float,
              "seed": int, "iters": int, "ratio": int, "inner_iters": int, "long_iters": int}
    if f.name == "timing":
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if raw.strip().lower() in ("none", ""):
        return None
    return target[f.name](raw) if f.name in target else raw


def read_config(path):
    """Parse a ``key = value`` file; ``#`` starts a comment."""
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


# ---------------------------------------------------------------- synthesis

def parse_holes(text):
    """``"r,c,h,w;r,c,h,w"`` to a list of rectangles."""
    holes = []
    for part in text.split(";"):
        if part.strip():
            vals = [int(v) for v in part.split(",")]
            if len(vals) != 4:
                raise ValueError(f"hole {part!r} needs four integers r,c,h,w")
            holes.append(tuple(vals))
    return holes


def default_holes(H, W):
    """Two rectangles inside the central region, scaled to the grid."""
    return [(H // 4, W // 5, max(1, H // 8), max(1, W // 6)),
            (H // 2, (3 * W) // 5, max(1, H // 6), max(1, W // 8))]


def build_partitions(task, shape, psf, ratio=3, holes=None):
    """Partitions (one per channel) for a sharp grid of ``shape = (C, H, W)``."""
    C, H, W = shape
    b = psf.half_width
    m, n = H - 2 * b, W - 2 * b
    if m < 1 or n < 1:
        raise ValueError(f"image {H}x{W} too small for a {psf.size}x{psf.size} PSF")
    if task == "deblur":
        parts = (boundary_partition(m, n, b),) * C
    elif task == "inpaint":
        base = boundary_partition(m, n, b)
        parts = (inpaint_partition(base, default_holes(H, W) if holes is None else holes),) * C
    elif task == "superres":
        parts = (decimation_partition(m, n, b, ratio),) * C
    else:
        if C != 3:
            raise ValueError("demosaic needs an RGB (PPM) image")
        parts = bayer_partitions(m, n, b)
    return parts


def _partition_names(parts):
    if len(parts) == 3 and all(p.kind == "bayer" for p in parts):
        return [f"partition_{c}.txt" for c in _CHANNELS]
    if len(parts) == 1:
        return ["partition.txt"]
    return [f"partition_{c}.txt" for c in range(len(parts))]


def _save_preview(path_base, grid):
    grid = np.asarray(grid)
    if grid.shape[0] == 1:
        write_pnm(path_base + ".pgm", grid[0])
    else:
        write_pnm(path_base + ".ppm", np.moveaxis(grid, 0, 2))


def cmd_synth(exp, sharp=None):
    """Synthesize an instance into ``exp.out``; ``sharp`` overrides ``exp.image``."""
    if sharp is None:
        if exp.image is None:
            raise ValueError("synth needs --image")
        sharp = read_pnm(exp.image)
    sharp = as_channels(sharp, "image")
    if exp.frame == "extend":
        b = exp.psf_kernel.half_width
        sharp = np.pad(sharp, ((0, 0), (b, b), (b, b)), mode="symmetric")
    holes = parse_holes(exp.holes) if exp.holes else None
    parts = build_partitions(exp.task, sharp.shape, exp.psf_kernel, exp.ratio, holes)
    if len(parts) == 1 and sharp.shape[0] > 1:
        parts = parts * sharp.shape[0]
    y, truth, sigma = synthesize(sharp, exp.psf_kernel, parts, exp.bsnr, exp.seed)
    os.makedirs(exp.out, exist_ok=True)
    observed = np.zeros(truth.shape)
    for c, (p, yc) in enumerate(zip(parts, y)):
        observed[c].ravel()[p.observed_indices] = yc
    np.save(os.path.join(exp.out, "truth.npy"), truth)
    np.save(os.path.join(exp.out, "observed.npy"), observed)
    unique = parts[:1] if all(p == parts[0] for p in parts) else parts
    for name, p in zip(_partition_names(unique), unique):
        write_partition(os.path.join(exp.out, name), p)
    meta = {"task": exp.task, "psf": exp.psf, "bsnr_db": exp.bsnr, "seed": exp.seed,
            "lambda": exp.lam, "sigma": sigma, "frame": exp.frame, "shape": list(truth.shape),
            "channels": truth.shape[0], "ratio": exp.ratio,
            "bsnr_convention": "variance of noiseless observed pixels over noise variance"}
    with open(os.path.join(exp.out, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _save_preview(os.path.join(exp.out, "observed"), observed)
    _save_preview(os.path.join(exp.out, "truth"), truth)
    return parts


@dataclass
class Instance:
    model: ObservationModel
    truth: np.ndarray
    meta: dict
    reference: Optional[np.ndarray] = None
    extras: dict = field(default_factory=dict)


def load_instance(out, lam=None, psf=None):
    """Reload what :func:`cmd_synth` (and possibly :func:`cmd_reference`) wrote."""
    with open(os.path.join(out, "meta.json")) as fh:
        meta = json.load(fh)
    truth = np.load(os.path.join(out, "truth.npy"))
    observed = np.load(os.path.join(out, "observed.npy"))
    C = truth.shape[0]
    if os.path.exists(os.path.join(out, "partition.txt")):
        parts = (read_partition(os.path.join(out, "partition.txt")),) * C
    else:
        names = [f"partition_{c}.txt" for c in _CHANNELS] if C == 3 else []
        if not names or not os.path.exists(os.path.join(out, names[0])):
            names = [f"partition_{c}.txt" for c in range(C)]
        parts = tuple(read_partition(os.path.join(out, nm)) for nm in names)
    ys = [observed[c].ravel()[p.observed_indices] for c, p in enumerate(parts)]
    kernel = psf_from_spec(psf or meta["psf"])
    model = ObservationModel(kernel, parts, ys, meta["lambda"] if lam is None else lam,
                             meta.get("sigma"))
    ref_path = os.path.join(out, "reference.npy")
    reference = np.load(ref_path) if os.path.exists(ref_path) else None
    return Instance(model, truth, meta, reference)


# ---------------------------------------------------------------- solving

@dataclass
class SolveResult:
    x: np.ndarray
    trace: list
    iterations: int
    seconds: float
    diverged: bool = False
    info: dict = field(default_factory=dict)


def run_solver(model, solver, *, iters=None, reference=None, stop_rmse=None, mu0=None,
               t=3.0, passes=None, inner_iters=5, freeze_mu_after=None):
    """Run ``solver`` on ``model``; catches the divergence guard instead of raising.

    ``freeze_mu_after`` stops the penalty adaptation of the partial ADMM after
    that many iterations (the adaptation can settle into a doubling/halving
    cycle that stalls a long run).
    """
    iters = DEFAULT_ITERS[solver] if iters is None else iters
    start = time.perf_counter()
    info = {}
    diverged = False
    if solver in ("proposed1", "proposedAD"):
        if passes is None:
            passes = 1 if solver == "proposed1" else "auto"
        elif passes != "auto":
            passes = int(passes)
        cfg = partial_admm.SolverConfig(
            mu0=mu0, adapt_t=t, passes=passes, max_iters=iters, freeze_mu_after=freeze_mu_after,
            stop_rule="rmse" if stop_rmse is not None else "fixed_iters",
            tol=stop_rmse if stop_rmse is not None else 1e-3)
        try:
            state, trace = partial_admm.run(model, cfg, reference=reference)
        except partial_admm.DivergenceError as exc:
            state, trace, diverged = exc.state, exc.trace, True
        x = state.x
        info = {"z": state.z(model), "v": state.v, "d": state.d, "mu": state.mu}
        n = state.iter
    elif solver == "admm_cg":
        x, trace, extra = baselines.admm_cg_run(
            model, baselines.CgConfig(mu0=mu0, adapt_t=t), max_iters=iters,
            reference=reference, stop_rmse=stop_rmse)
        n = extra["iters"]
        info = {"z": model.z_of(extra["z"]), "mu": extra["mu"]}
    elif solver == "cm":
        x, trace, extra = baselines.cm_run(model, max_iters=iters, reference=reference,
                                           stop_rmse=stop_rmse, trace_every=1 if stop_rmse else 100)
        n = extra["iters"]
    else:
        plugin = get_plugin("tv", lam=model.lam, mu0=mu0, adapt_t=t)
        x, ftrace, _ = framework_run(model, plugin, iters, inner_iters, reference=reference)
        nan = float("nan")
        trace = [partial_admm.MonitorRecord(r.iter, r.elapsed, r.rmse, plugin.mu, nan, nan, nan, nan)
                 for r in ftrace]
        n = iters
    if not np.all(np.isfinite(x)):
        diverged = True
    return SolveResult(x, trace, n, time.perf_counter() - start, diverged, info)


def cmd_solve(exp):
    """Solve the instance in ``exp.out``; returns an exit code."""
    inst = load_instance(exp.out, lam=exp.lam if exp.lam_given else None)
    res = run_solver(inst.model, exp.solver, iters=exp.iters, reference=inst.reference,
                     stop_rmse=exp.stop_rmse, mu0=exp.mu0, t=exp.t, passes=exp.passes,
                     inner_iters=exp.inner_iters)
    np.save(os.path.join(exp.out, f"restored_{exp.solver}.npy"), res.x)
    write_trace(os.path.join(exp.out, f"trace_{exp.solver}.csv"), res.trace, timing=exp.timing)
    _save_preview(os.path.join(exp.out, f"restored_{exp.solver}"), res.x)
    return EXIT_DIVERGED if res.diverged else EXIT_OK


def reference_freeze(iters):
    """Iteration after which reference runs stop adapting the penalty."""
    return max(1, iters // 10)


def cmd_reference(exp):
    """Long run saved as ``reference.npy``; partial-ADMM runs also save ``(z, v, p, mu)``."""
    inst = load_instance(exp.out, lam=exp.lam if exp.lam_given else None)
    solver = exp.solver if exp.solver != "framework" else "proposedAD"
    iters = exp.iters if exp.iters is not None else (
        exp.long_iters if solver.startswith("proposed") else DEFAULT_ITERS[solver])
    res = run_solver(inst.model, solver, iters=iters, mu0=exp.mu0, t=exp.t, passes=exp.passes,
                     freeze_mu_after=reference_freeze(iters))
    if res.diverged:
        return EXIT_DIVERGED
    np.save(os.path.join(exp.out, "reference.npy"), res.x)
    if "v" in res.info:
        mu = res.info["mu"]
        np.savez(os.path.join(exp.out, "reference_state.npz"), x=res.x, z=res.info["z"],
                 v=res.info["v"], p=mu * res.info["d"], mu=mu)
    return EXIT_OK


# ---------------------------------------------------------------- benchmarking

BENCH_FIELDS = ("method", "blur_size", "kappa_e3", "iterations", "time_s")


def bench_cell(model, solver, reference, threshold=1e-3, iters=None, **kw):
    """Iterations and wall time until the RMSE to ``reference`` drops below ``threshold``."""
    res = run_solver(model, solver, iters=iters, reference=reference, stop_rmse=threshold, **kw)
    reached = bool(res.trace) and res.trace[-1].rmse < threshold
    return {"iterations": res.iterations if reached else None, "time_s": res.seconds,
            "diverged": res.diverged}


def bench(instances, solvers, threshold=1e-3, workers=1, iters=None):
    """Run every ``(instance, solver)`` cell.

    ``instances`` is a list of ``(blur_size, model, reference)``.  Rows come
    back in input order regardless of ``workers``.
    """
    cells = [(size, model, ref, solver) for size, model, ref in instances for solver in solvers]

    def work(cell):
        size, model, ref, solver = cell
        out = bench_cell(model, solver, ref, threshold, iters=(iters or {}).get(solver))
        kappa = model.operator.condition_number()
        return {"method": solver, "blur_size": size, "kappa_e3": kappa / 1e3,
                "iterations": out["iterations"], "time_s": out["time_s"]}

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(work, cells))
    return [work(c) for c in cells]


def write_bench(rows, csv_path, md_path=None):
    with open(csv_path, "w", newline="") as fh:
        w = csv.DictWriter(fh, BENCH_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r[k] is None else r[k]) for k in BENCH_FIELDS})
    if md_path:
        with open(md_path, "w") as fh:
            fh.write("| " + " | ".join(BENCH_FIELDS) + " |\n")
            fh.write("|" + "---|" * len(BENCH_FIELDS) + "\n")
            for r in rows:
                cells = [r["method"], f"{r['blur_size']}x{r['blur_size']}", f"{r['kappa_e3']:.3f}",
                         "-" if r["iterations"] is None else str(r["iterations"]),
                         f"{r['time_s']:.3f}"]
                fh.write("| " + " | ".join(cells) + " |\n")


def cmd_bench(exp, sizes, solvers, workers=1):
    """Synthesize, reference and benchmark one instance per PSF size in ``sizes``."""
    kind = exp.psf.split(":")[0]
    instances = []
    for size in sizes:
        sub = Experiment.from_mapping({**asdict(exp), "psf": f"{kind}:{size}",
                                       "out": os.path.join(exp.out, f"{kind}{size}")})
        cmd_synth(sub)
        if cmd_reference(sub) != EXIT_OK:
            raise RuntimeError(f"reference run diverged for {kind}:{size}")
        inst = load_instance(sub.out)
        instances.append((size, inst.model, inst.reference))
    rows = bench(instances, solvers, workers=workers)
    write_bench(rows, os.path.join(exp.out, "bench.csv"), os.path.join(exp.out, "bench.md"))
    return rows


# ---------------------------------------------------------------- metrics

def cmd_metrics(out, estimate_path=None, solver=None):
    """RMSE against the reference and the truth, and ISNR over the central block."""
    inst = load_instance(out)
    if estimate_path is None:
        estimate_path = os.path.join(out, f"restored_{solver or 'proposedAD'}.npy")
    x = np.load(estimate_path)
    result = {"rmse_truth": rmse(x, inst.truth)}
    if inst.reference is not None:
        result["rmse_reference"] = rmse(x, inst.reference)
    parts = inst.model.partitions
    if all(p.kind == "boundary" for p in parts):
        b = parts[0].b
        result["isnr_db"] = isnr(central(inst.model.y_full, b), central(x, b),
                                 central(inst.truth, b))
    return result
