"""Command-line driver: ``enscore run <config>`` and ``enscore list``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import ChainConfig, mala, rwmh
from .config import ConfigError, ExperimentConfig, load_config
from .diffusion import ForwardKind, ForwardSpec, NoiseSchedule
from .estimator import EstimatorDegenerateError
from .evaluation import energy_distance, self_distance_threshold, summarize
from .registry import Problem, build_problem, listing
from .sampler import NonFiniteStateError, SamplerConfig, run, run_pooled

log = logging.getLogger("enscore")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def build_forward(cfg: ExperimentConfig, problem: Problem) -> ForwardSpec:
    fw = cfg.forward
    dim = problem.target.dim
    if fw.kind == ForwardKind.ZERO_DRIFT.value:
        return ForwardSpec.zero_drift(dim, NoiseSchedule(fw.sigma_min, fw.sigma_max, fw.p))
    if problem.prior_cov is None:
        raise ConfigError(
            f"forward.kind OrnsteinUhlenbeck needs a prior covariance; target "
            f"'{cfg.target.name}' has none"
        )
    mu = np.broadcast_to(np.asarray(fw.mu, dtype=float), (dim,)).copy()
    return ForwardSpec.ornstein_uhlenbeck(fw.theta, problem.prior_cov, fw.alpha, mu)


def sampler_config(cfg: ExperimentConfig, threads: int) -> SamplerConfig:
    s = cfg.sampler
    return SamplerConfig(
        n_ens=s.n_ens,
        n_resample=s.n_resample,
        dt_init=s.dt_init,
        integrator=s.integrator,
        estimator_kind=s.estimator_kind,
        antithetic=s.antithetic,
        node_mode=s.node_mode,
        seed=cfg.seed,
        threads=threads,
    )


def write_csv(path: Path, samples: np.ndarray) -> None:
    header = ",".join(f"x{i}" for i in range(samples.shape[1]))
    np.savetxt(path, samples, delimiter=",", header=header, comments="", fmt="%.17g")


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def run_experiment(cfg: ExperimentConfig, threads: int = 1, output: str | None = None) -> Path:
    """Run one configured experiment and write its artifacts; returns the output directory."""
    out = Path(output or cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    seeds = np.random.SeedSequence(cfg.seed).generate_state(4)
    t0 = time.perf_counter()

    try:
        problem = build_problem(cfg.target.name, cfg.target.params)
        spec = build_forward(cfg, problem)
        scfg = sampler_config(cfg, threads)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    target = problem.target

    if cfg.sampler.pool_total:
        samples, evals = run_pooled(spec, target, scfg, cfg.sampler.pool_total)
    else:
        rec = run(spec, target, scfg)
        samples, evals = rec.final_ensemble, rec.p0_eval_count
    t_ens = time.perf_counter() - t0
    write_csv(out / "samples.csv", samples)

    summary = {"ens": summarize(samples).to_dict()}
    meta = {
        "p0_eval_count": int(evals),
        "wall_time_s": {"ens": t_ens},
        "config": cfg.to_dict(),
        "code_version": __version__,
        "threads": threads,
    }

    baseline_samples = None
    if cfg.baseline is not None:
        b = cfg.baseline
        ccfg = ChainConfig(b.n_chains, b.n_steps, b.burn_in, b.step_size, int(seeds[0]), b.n_samples)
        t1 = time.perf_counter()
        res = (mala if b.method == "mala" else rwmh)(target, ccfg)
        baseline_samples = res.samples
        write_csv(out / f"{b.method}_samples.csv", baseline_samples)
        summary[b.method] = summarize(baseline_samples).to_dict()
        meta["wall_time_s"][b.method] = time.perf_counter() - t1
        meta[f"{b.method}_acceptance_rate"] = res.acceptance_rate
        meta[f"{b.method}_density_evals"] = res.n_density_evals

    ref_sampler = problem.posterior.sample if problem.posterior is not None else target.reference_sampler
    if ref_sampler is not None:
        ev = cfg.eval
        n_ref = ev.n_reference or len(samples)
        ref = ref_sampler(n_ref, int(seeds[1]))
        energy = {
            "reference": "analytic_posterior" if problem.posterior is not None else "direct_sampler",
            "n_reference": n_ref,
            "tau_self": self_distance_threshold(ref_sampler, n_ref, ev.p_norm, ev.n_repeats, int(seeds[2])),
            "ens_vs_reference": energy_distance(samples, ref, ev.p_norm, ev.n_repeats, int(seeds[3])).to_dict(),
        }
        if baseline_samples is not None:
            energy[f"{cfg.baseline.method}_vs_reference"] = energy_distance(
                baseline_samples, ref, ev.p_norm, ev.n_repeats, int(seeds[3])
            ).to_dict()
        _dump(out / "energy.json", energy)

    _dump(out / "summary.json", summary)
    meta["wall_time_s"]["total"] = time.perf_counter() - t0
    _dump(out / "run_meta.json", meta)
    return out


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="enscore", description="Ensemble score-based diffusion sampler")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one experiment config")
    r.add_argument("config")
    r.add_argument("--seed", type=int, help="override the config seed")
    r.add_argument("--threads", type=int, default=1, help="cap on worker threads")
    r.add_argument("--output", help="override the output directory")
    sub.add_parser("list", help="list registered targets, estimators and integrators")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    if args.command == "list":
        print(listing())
        return EXIT_OK
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = dataclasses.replace(cfg, seed=args.seed)
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        out = run_experiment(cfg, args.threads, args.output)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (EstimatorDegenerateError, NonFiniteStateError) as exc:
        diag = {"error": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, NonFiniteStateError):
            diag.update(member=exc.member, t=exc.t)
        text = json.dumps(diag, indent=2, sort_keys=True)
        print(text, file=sys.stderr)
        out = Path(args.output or cfg.output)
        out.mkdir(parents=True, exist_ok=True)
        (out / "error.json").write_text(text + "\n")
        return EXIT_RUNTIME
    print(out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
