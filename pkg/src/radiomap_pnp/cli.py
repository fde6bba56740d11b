"""Batch experiment driver.

Subcommands cover the full pipeline: gen (synthetic map + sidecar),
sample (mask), solve (either solver), eval (metrics CSV), analyze
(theory reports as JSON), bench (seeded Monte Carlo grids with
aggregate CSV and figures) and render (log-power heatmap PNG).  Every
artifact carries its producing configuration and seed in a sidecar, so
any output can be regenerated from the sidecar alone.
"""

import argparse
import concurrent.futures
import json
import os
import sys

import numpy as np
from PIL import Image

from . import fileio, metrics
from .analysis import (evaluate_bounds, kkt_residual, lemma2_bounds,
                       verify_assumption1)
from .core import FactorModel, RadioMap, matricize, restrict
from .datagen import NoiseSpec, StatModelConfig, add_noise, generate_map, \
    sample_mask
from .denoise import DenoiserSpec, LinearDenoiser
from .errors import ConfigError
from .solver import SolverParams, dapnp_solve, lapnp_solve

CONFIG_KEYS = {
    "lambda": "lam",
    "zeta": "zeta",
    "rho0": "rho0",
    "eta": "eta",
    "gamma": "gamma_rho",
    "j_inner": "j_inner",
    "max_iter": "max_iter",
    "tol": "tol",
}
GRID_KEYS = {"taus", "snrs", "sigma_s", "methods", "denoiser", "trials",
             "rank"}


def load_config(path):
    """Parse a solver-config JSON into (SolverParams, grid dict).

    Unknown keys are rejected by name; missing keys take the documented
    defaults; values are validated by SolverParams itself.
    """
    try:
        doc = fileio.read_json(path)
    except json.JSONDecodeError as exc:
        raise ConfigError("<document>", f"malformed JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("<document>", "top level must be an object")
    kwargs = {}
    grid = {}
    for key, value in doc.items():
        if key in CONFIG_KEYS:
            kwargs[CONFIG_KEYS[key]] = value
        elif key == "grid":
            if not isinstance(value, dict):
                raise ConfigError("grid", "must be an object")
            unknown = set(value) - GRID_KEYS
            if unknown:
                raise ConfigError(sorted(unknown)[0], "unknown grid key")
            grid = dict(value)
        else:
            raise ConfigError(key, "unknown key")
    try:
        params = SolverParams(**kwargs)
    except ValueError as exc:
        offender = next(iter(kwargs)) if kwargs else "<document>"
        for json_key, attr in CONFIG_KEYS.items():
            if attr in kwargs and _violates(attr, kwargs[attr]):
                offender = json_key
                break
        raise ConfigError(offender, str(exc)) from exc
    return params, grid


def _violates(attr, value):
    try:
        SolverParams(**{attr: value})
        return False
    except (ValueError, TypeError):
        return True


def dump_config(params, grid=None):
    doc = {json_key: getattr(params, attr)
           for json_key, attr in CONFIG_KEYS.items()}
    if grid:
        doc["grid"] = grid
    return doc


def render_heatmap(field, path):
    """8-bit grayscale log-power heatmap, row m at the top.

    Pixel value is the affine map of 10*log10(x + floor) to [0, 255];
    a constant field renders mid-gray.
    """
    field = np.asarray(field, dtype=float)
    if not np.all(np.isfinite(field)):
        raise ValueError("heatmap input must be finite")
    top = field.max() if field.size else 0.0
    floor = 1e-12 * top if top > 0 else 1.0
    logged = 10.0 * np.log10(np.maximum(field, 0.0) + floor)
    lo, hi = logged.min(), logged.max()
    if hi - lo <= 0:
        norm = np.full_like(field, 0.5)
    else:
        norm = (logged - lo) / (hi - lo)
    pixels = np.rint(norm * 255.0).astype(np.uint8)
    Image.fromarray(pixels, mode="L").save(path, format="PNG")


def _mask_from_args(args, dims):
    return fileio.read_mask(args.mask, dims)


def _denoiser_spec(name):
    return DenoiserSpec.from_name(name)


def _write_state(path, result, meas):
    blobs = {
        "s_vec": result.s_vec, "c_mat": result.c_mat,
        "z_vec": result.z_vec, "psi_vec": result.psi_vec,
        "rho": result.rho, "scale": result.scale,
        "grid": np.array([meas.mask.m, meas.mask.n]),
    }
    if result.denoisers is not None:
        for r, den in enumerate(result.denoisers):
            w = den.w.tocsr()
            blobs[f"w{r}_data"] = w.data
            blobs[f"w{r}_indices"] = w.indices
            blobs[f"w{r}_indptr"] = w.indptr
            blobs[f"w{r}_shape"] = np.array(w.shape)
    np.savez_compressed(path, **blobs)


def _load_state(path):
    import scipy.sparse as sp

    blob = np.load(path)
    denoisers = []
    r = 0
    while f"w{r}_data" in blob:
        w = sp.csr_matrix(
            (blob[f"w{r}_data"], blob[f"w{r}_indices"], blob[f"w{r}_indptr"]),
            shape=tuple(blob[f"w{r}_shape"]))
        denoisers.append(LinearDenoiser(w=w, frozen=True))
        r += 1
    return blob, denoisers


def cmd_gen(args):
    cfg = StatModelConfig(
        m=args.dims[0], n=args.dims[1], k=args.dims[2], r=args.rank,
        sigma_s=args.sigma_s, d_c=args.dc, d0=args.d0, seed=args.seed)
    radio_map, model, sidecar = generate_map(cfg)
    os.makedirs(args.out_dir, exist_ok=True)
    fileio.write_tensor(os.path.join(args.out_dir, "map.rmt1"), radio_map.data)
    fileio.write_json(os.path.join(args.out_dir, "map.json"), sidecar)
    np.savez_compressed(os.path.join(args.out_dir, "factors.npz"),
                        slfs=model.slfs, psds=model.psds)
    print(os.path.join(args.out_dir, "map.rmt1"))
    return 0


def cmd_sample(args):
    data = fileio.read_tensor(args.input)
    rng = np.random.default_rng(args.seed)
    mask = sample_mask(data.shape[:2], args.tau, rng)
    fileio.write_mask(args.out, mask)
    fileio.write_json(args.out + ".meta.json",
                      {"tau": args.tau, "seed": args.seed,
                       "dims": list(data.shape[:2]), "size": mask.size})
    print(args.out)
    return 0


def cmd_solve(args):
    data = fileio.read_tensor(args.input)
    mask = _mask_from_args(args, data.shape[:2])
    params = SolverParams() if args.config is None \
        else load_config(args.config)[0]
    spec = _denoiser_spec(args.denoiser)
    noise = NoiseSpec.parse(args.snr)
    rng = np.random.default_rng(args.seed)
    noisy, _ = add_noise(data, noise, rng)
    os.makedirs(args.out_dir, exist_ok=True)

    if args.method == "lapnp":
        meas = restrict(matricize(noisy), mask)
        result = lapnp_solve(meas, args.rank, params, spec)
        estimate = result.estimate.data
        run_log = result.run_log
        if args.save_state:
            _write_state(os.path.join(args.out_dir, "state.npz"),
                         result, meas)
    elif args.method == "dapnp":
        result = dapnp_solve(noisy, mask, params, spec)
        estimate = result.estimate
        run_log = result.run_log
    else:
        raise ValueError(f"unknown method {args.method!r}")

    fileio.write_tensor(os.path.join(args.out_dir, "estimate.rmt1"),
                        estimate)
    with open(os.path.join(args.out_dir, "runlog.jsonl"), "w") as fh:
        for record in run_log:
            fh.write(json.dumps(record) + "\n")
    fileio.write_json(os.path.join(args.out_dir, "solve.json"), {
        "method": args.method, "denoiser": args.denoiser, "rank": args.rank,
        "snr": args.snr, "seed": args.seed,
        "config": dump_config(params),
        "iterations": result.iterations, "converged": result.converged,
        "seconds": result.runtime,
        "calls_per_iter": result.calls_per_iter[:1],
    })
    print(os.path.join(args.out_dir, "estimate.rmt1"))
    return 0


def cmd_eval(args):
    estimate = fileio.read_tensor(args.estimate)
    truth = fileio.read_tensor(args.truth)
    seconds = args.seconds
    if args.solve_meta is not None:
        seconds = fileio.read_json(args.solve_meta).get("seconds", seconds)
    row = metrics.metrics_row(
        run_id=args.run_id, method=args.method, tau=args.tau,
        sigma_s=args.sigma_s, snr=args.snr,
        rse_value=metrics.rse(np.maximum(estimate, 0), RadioMap(truth)),
        mssim_value=metrics.mssim(estimate, truth), seconds=seconds)
    metrics.write_metrics_csv(args.out, [row], append=args.append)
    print(f"{row['rse']:.6f},{row['mssim']:.6f}")
    return 0


def cmd_analyze(args):
    blob, denoisers = _load_state(args.state)
    truth = fileio.read_tensor(args.truth)
    factors = np.load(args.factors)
    mask = _mask_from_args(args, truth.shape[:2])
    meas = restrict(matricize(truth), mask)
    params = SolverParams() if args.config is None \
        else load_config(args.config)[0]
    model = FactorModel(slfs=factors["slfs"], psds=factors["psds"])
    rho = float(blob["rho"])

    report = {}
    if denoisers:
        report["assumption1"] = [
            verify_assumption1(d).as_dict() for d in denoisers]
        bounds = lemma2_bounds(model, meas, denoisers, rho,
                               params.zeta, params.lam,
                               solution_psds=blob["c_mat"].T)
        iota = float(np.max(meas.ymat) / meas.scale)
        evaluate_bounds(bounds, truth.shape, meas.mask.size,
                        model.r, iota)
        report["bounds"] = bounds.as_dict()
        report["kkt"] = kkt_residual(
            blob["s_vec"], blob["c_mat"], blob["psi_vec"], meas,
            denoisers, rho, params.lam, params.zeta)
        report["containment"] = {
            "psd_sq_norm": float(np.sum(blob["c_mat"]**2)),
            "field_sq_norm": float(np.sum(blob["s_vec"]**2)),
            "alpha": bounds.alpha, "beta": bounds.beta,
        }
    fileio.write_json(args.out, report)
    print(args.out)
    return 0


def _bench_trial(job):
    """One seeded draw -> metrics row; module-level so pools can pickle."""
    (trial, seed, tau, snr, sigma_s, method, denoiser, rank, dims,
     config_doc) = job
    cfg = StatModelConfig(m=dims[0], n=dims[1], k=dims[2], r=rank,
                          sigma_s=sigma_s, seed=seed)
    radio_map, _, _ = generate_map(cfg)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 77]))
    mask = sample_mask((cfg.m, cfg.n), tau, rng)
    noisy, _ = add_noise(radio_map, NoiseSpec.parse(snr), rng)
    params = SolverParams(**{CONFIG_KEYS[k]: v for k, v in config_doc.items()
                             if k in CONFIG_KEYS})
    spec = DenoiserSpec.from_name(denoiser)
    if method == "lapnp":
        meas = restrict(matricize(noisy), mask)
        result = lapnp_solve(meas, rank, params, spec)
        estimate = result.estimate.data
    else:
        result = dapnp_solve(noisy, mask, params, spec)
        estimate = result.estimate
    return metrics.metrics_row(
        run_id=f"t{trial}-s{seed}", method=method, tau=tau,
        sigma_s=sigma_s, snr=snr,
        rse_value=metrics.rse(np.maximum(estimate, 0), radio_map),
        mssim_value=metrics.mssim(estimate, radio_map),
        seconds=result.runtime)


def cmd_bench(args):
    from . import figures

    os.makedirs(args.out_dir, exist_ok=True)
    config_doc = {} if args.config is None \
        else dump_config(load_config(args.config)[0])
    taus = [float(t) for t in args.taus.split(",")]
    snrs = args.snrs.split(",")
    sigmas = [float(s) for s in args.sigma_s.split(",")]
    methods = args.methods.split(",")
    jobs = []
    for trial in range(args.trials):
        seed = args.seed + trial
        for tau in taus:
            for snr in snrs:
                for sigma_s in sigmas:
                    for method in methods:
                        jobs.append((trial, seed, tau, snr, sigma_s, method,
                                     args.denoiser, args.rank,
                                     tuple(args.dims), config_doc))

    workers = int(os.environ.get("RME_THREADS", "0")) or None
    rows = []
    if workers == 1 or len(jobs) == 1:
        rows = [_bench_trial(job) for job in jobs]
    else:
        with concurrent.futures.ProcessPoolExecutor(workers) as pool:
            rows = list(pool.map(_bench_trial, jobs))

    trial_csv = os.path.join(args.out_dir, "trials.csv")
    metrics.write_metrics_csv(trial_csv, rows)

    agg = {}
    for row in rows:
        key = (row["method"], row["tau"], row["sigma_s"], row["snr"])
        agg.setdefault(key, []).append(row)
    agg_rows = []
    for (method, tau, sigma_s, snr), members in sorted(agg.items()):
        agg_rows.append(metrics.metrics_row(
            run_id=f"mean-of-{len(members)}", method=method, tau=tau,
            sigma_s=sigma_s, snr=snr,
            rse_value=float(np.mean([m["rse"] for m in members])),
            mssim_value=float(np.mean([m["mssim"] for m in members])),
            seconds=float(np.mean([m["seconds"] for m in members]))))
    agg_csv = os.path.join(args.out_dir, "aggregate.csv")
    metrics.write_metrics_csv(agg_csv, agg_rows)
    figures.metric_curves(agg_rows, os.path.join(args.out_dir, "metrics.png"))
    figures.runtime_bars(agg_rows, os.path.join(args.out_dir, "runtime.png"))
    print(agg_csv)
    return 0


def cmd_render(args):
    data = fileio.read_tensor(args.input)
    if not 0 <= args.band < data.shape[2]:
        raise ValueError(f"band {args.band} outside 0..{data.shape[2] - 1}")
    render_heatmap(data[:, :, args.band], args.out)
    print(args.out)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="rmap", description="radio map reconstruction toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic radio map")
    p.add_argument("--dims", type=int, nargs=3, default=[51, 51, 32],
                   metavar=("M", "N", "K"))
    p.add_argument("--rank", type=int, default=6)
    p.add_argument("--sigma-s", type=float, default=6.0)
    p.add_argument("--dc", type=float, default=50.0)
    p.add_argument("--d0", type=float, default=2.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("sample", help="draw a sampling mask")
    p.add_argument("--input", required=True)
    p.add_argument("--tau", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("solve", help="reconstruct a map from samples")
    p.add_argument("--input", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--config")
    p.add_argument("--method", choices=["lapnp", "dapnp"], default="lapnp")
    p.add_argument("--denoiser", default="dsg-nlm")
    p.add_argument("--rank", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--snr", default="clean")
    p.add_argument("--save-state", action="store_true")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("eval", help="score an estimate against the truth")
    p.add_argument("--estimate", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--append", action="store_true")
    p.add_argument("--run-id", default="run")
    p.add_argument("--method", default="")
    p.add_argument("--tau", default="")
    p.add_argument("--sigma-s", default="")
    p.add_argument("--snr", default="")
    p.add_argument("--seconds", default="")
    p.add_argument("--solve-meta")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="emit theory reports for a run")
    p.add_argument("--state", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--factors", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("bench", help="seeded Monte Carlo benchmark grid")
    p.add_argument("--dims", type=int, nargs=3, default=[51, 51, 32])
    p.add_argument("--rank", type=int, default=6)
    p.add_argument("--taus", default="0.05,0.10,0.15,0.20")
    p.add_argument("--snrs", default="clean")
    p.add_argument("--sigma-s", default="6")
    p.add_argument("--methods", default="lapnp")
    p.add_argument("--denoiser", default="dsg-nlm")
    p.add_argument("--trials", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("render", help="write a log-power heatmap PNG")
    p.add_argument("--input", required=True)
    p.add_argument("--band", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError, RuntimeError) as exc:
        print(f"rmap: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
