"""Command-line entry point: ``tvpnet {ingest,fit,summarize,simulate}``.

Exit codes: 0 success, 2 usage or configuration error, 3 malformed input,
4 alignment error, 5 sampler failure, 6 output directory locked or not
writable, 1 anything else.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
import warnings
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .artifacts import load_npz, save_npz
from .diagnostics import auc, summarize, window_average_network
from .gibbs import SamplerError, run_sampler
from .ingest import (
    CHANNELS,
    AlignmentError,
    InputError,
    align,
    build_comovement,
    build_covariates,
    read_covariates,
    read_events,
    read_network,
    read_prices,
    read_returns,
    write_covariates,
    write_network,
    zero_covariates,
)
from .model import ModelConfig, PosteriorSamples, link_probability, linear_predictor, simulate
from .synthetic import smooth_truth

log = logging.getLogger("tvpnet")

EXIT_OK, EXIT_INTERNAL, EXIT_USAGE, EXIT_INPUT, EXIT_ALIGN, EXIT_SAMPLER, EXIT_OUTPUT = 0, 1, 2, 3, 4, 5, 6

NETWORK_FILE = "network.csv"
COVARIATES_FILE = "covariates.csv"
POSTERIOR_FILE = "posterior.npz"
CHECKPOINT_FILE = "checkpoint.npz"
SUMMARY_FILE = "summary.csv"
LOCK_FILE = ".tvpnet.lock"

MODEL_KEYS = {f for f in ModelConfig.__dataclass_fields__ if f not in ("seed",)}


class ConfigError(ValueError):
    pass


class OutputLocked(OSError):
    pass


@dataclass
class RunConfigFile:
    """Declarative run description; relative paths resolve against the file."""

    paths: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    holdout_last: bool = False
    output_dir: str = None
    seed: int = None

    @classmethod
    def load(cls, path) -> "RunConfigFile":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        unknown = set(raw) - {"paths", "model", "holdout_last", "output_dir", "seed"}
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        bad = set(raw.get("model", {})) - MODEL_KEYS
        if bad:
            raise ConfigError(f"unknown model settings: {', '.join(sorted(bad))}")
        base = path.parent
        paths = {k: str((base / v)) for k, v in raw.get("paths", {}).items()}
        out = raw.get("output_dir")
        return cls(paths, dict(raw.get("model", {})), bool(raw.get("holdout_last", False)),
                   str(base / out) if out else None, raw.get("seed"))


def _load_config(args) -> RunConfigFile:
    return RunConfigFile.load(args.config) if getattr(args, "config", None) else RunConfigFile()


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_dir: Path, command: str, settings: dict, seed, inputs: dict, outputs: list):
    canonical = json.dumps(settings, sort_keys=True, default=str)
    manifest = {
        "command": command,
        "config_hash": hashlib.sha256(canonical.encode()).hexdigest(),
        "settings": json.loads(canonical),
        "seed": seed,
        "versions": {
            "tvpnet": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "inputs": {k: {"file": os.path.basename(v), "sha256": _sha256(v)} for k, v in sorted(inputs.items())},
        "outputs": sorted(outputs),
    }
    (out_dir / f"manifest_{command}.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")


@contextmanager
def _locked_output(out_dir):
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        fd = os.open(out / LOCK_FILE, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise OutputLocked(f"output directory {out} is in use (remove {LOCK_FILE} if stale)") from None
    except OSError as exc:
        raise OutputLocked(f"output directory {out} is not writable: {exc}") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield out
    finally:
        try:
            os.unlink(out / LOCK_FILE)
        except FileNotFoundError:
            pass


def _require_paths(paths: dict):
    for name, p in paths.items():
        if p is not None and not os.path.exists(p):
            raise ConfigError(f"{name} file not found: {p}")


def _output_dir(args, cfg: RunConfigFile) -> str:
    out = args.output_dir or cfg.output_dir
    if not out:
        raise ConfigError("no output directory given (--output-dir or config output_dir)")
    return out


# --- ingest ------------------------------------------------------------------------------


def cmd_ingest(args) -> int:
    cfg = _load_config(args)
    returns = args.returns or cfg.paths.get("returns")
    prices = args.prices or cfg.paths.get("prices")
    events = args.events or cfg.paths.get("events")
    if bool(returns) == bool(prices):
        raise ConfigError("give exactly one of --returns or --prices")
    _require_paths({"returns": returns, "prices": prices, "events": events})
    channels = tuple(args.channels.split(",")) if args.channels else CHANNELS
    for ch in channels:
        if ch not in CHANNELS:
            raise ConfigError(f"unknown channel {ch!r}; choose from {', '.join(CHANNELS)}")

    table = read_returns(returns) if returns else read_prices(prices)
    net = build_comovement(table, zero_rule=args.zero_rule)

    covs = None
    if events:
        ev = read_events(events, periods=net.periods)
        if not ev.countries:
            warnings.warn(f"events file {events} has no rows; covariates set to zero", stacklevel=1)
        else:
            covs = build_covariates(ev, channels)
    if covs is None:
        if not events:
            warnings.warn("no events file given; covariates set to zero", stacklevel=1)
        covs = zero_covariates(net, channels)
    else:
        aligned = align(net, covs)
        net, covs = aligned.net, aligned.covs

    with _locked_output(_output_dir(args, cfg)) as out:
        write_network(net, out / NETWORK_FILE)
        write_covariates(covs, out / COVARIATES_FILE)
        inputs = {k: v for k, v in {"returns": returns, "prices": prices, "events": events}.items() if v}
        _write_manifest(out, "ingest", {"channels": channels, "zero_rule": args.zero_rule}, None,
                        inputs, [NETWORK_FILE, COVARIATES_FILE])
    print(f"V={net.V} N={net.N} P={covs.P} missing_rate={net.missing_rate():.4f}")
    return EXIT_OK


# --- fit ---------------------------------------------------------------------------------


def _model_config(args, cfg: RunConfigFile) -> ModelConfig:
    settings = dict(cfg.model)
    for key in ("H", "n_iter", "n_burn", "kappa_mu", "kappa_x", "kappa_beta", "a1", "a2", "jitter"):
        v = getattr(args, key, None)
        if v is not None:
            settings[key] = v
    seed = args.seed if args.seed is not None else cfg.seed
    try:
        return ModelConfig(seed=seed, **settings)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid model configuration: {exc}") from None


def save_posterior(path, samples: PosteriorSamples, holdout_truth=None, holdout_period=None):
    arrays = {
        "pi": samples.pi, "mu": samples.mu, "beta": samples.beta, "tau": samples.tau,
        "x_energy": samples.x_energy, "loglik": samples.loglik,
    }
    if holdout_truth is not None:
        arrays["holdout_truth"] = holdout_truth
    meta = dict(samples.meta)
    meta.update({
        "node_labels": list(samples.node_labels),
        "predictor_labels": list(samples.predictor_labels),
        "periods": list(samples.periods),
        "holdout_period": holdout_period,
    })
    save_npz(path, arrays, meta)


def load_posterior(path):
    """Return ``(samples, holdout_truth, holdout_period)``."""
    arrays, meta = load_npz(path)
    samples = PosteriorSamples(
        pi=arrays["pi"], mu=arrays["mu"], beta=arrays["beta"], tau=arrays["tau"],
        x_energy=arrays["x_energy"], loglik=arrays["loglik"],
        node_labels=tuple(meta["node_labels"]), predictor_labels=tuple(meta["predictor_labels"]),
        periods=tuple(meta["periods"]), meta=meta,
    )
    return samples, arrays.get("holdout_truth"), meta.get("holdout_period")


def cmd_fit(args) -> int:
    cfg = _load_config(args)
    net_path = args.network or cfg.paths.get("network")
    cov_path = args.covariates or cfg.paths.get("covariates")
    if not net_path:
        raise ConfigError("no network file given (--network or config paths.network)")
    _require_paths({"network": net_path, "covariates": cov_path})
    config = _model_config(args, cfg)
    holdout = args.holdout_last or cfg.holdout_last

    net = read_network(net_path)
    covs = read_covariates(cov_path) if cov_path else None
    inputs = align(net, covs, holdout_last=holdout)
    log.info("fitting V=%d N=%d P=%d H=%d for %d sweeps", inputs.net.V, inputs.net.N, inputs.covs.P,
             config.H, config.n_iter)

    with _locked_output(_output_dir(args, cfg)) as out:
        ckpt = out / CHECKPOINT_FILE
        samples = run_sampler(
            inputs.net, inputs.covs, config,
            checkpoint_path=ckpt, checkpoint_every=args.checkpoint_every,
            resume=args.resume, stop_after=args.stop_after,
        )
        if samples is None:
            print(f"stopped after {args.stop_after} sweeps; checkpoint at {ckpt}")
            return EXIT_OK
        save_posterior(out / POSTERIOR_FILE, samples, inputs.holdout_truth, inputs.holdout_period)
        settings = {"model": _jsonable(config.to_dict()), "holdout_last": holdout}
        files = {"network": net_path}
        if cov_path:
            files["covariates"] = cov_path
        _write_manifest(out, "fit", settings, config.seed, files, [POSTERIOR_FILE, CHECKPOINT_FILE])
    print(f"retained {samples.n_draws} draws -> {out / POSTERIOR_FILE}")
    return EXIT_OK


def _jsonable(d):
    return json.loads(json.dumps(d))


# --- summarize ---------------------------------------------------------------------------


def _fmt(v) -> str:
    return repr(float(v))


def _parse_window(text: str, periods: tuple):
    name, _, rng = text.partition("=")
    if not rng:
        raise ConfigError(f"window {text!r} must look like NAME=START:END")
    start, _, end = rng.partition(":")
    end = end or start
    if start not in periods or end not in periods:
        raise ConfigError(f"window {text!r} lies outside the time grid {periods[0]}..{periods[-1]}")
    a, b = periods.index(start), periods.index(end)
    if a > b:
        raise ConfigError(f"window {text!r} ends before it starts")
    return name, range(a, b + 1)


def cmd_summarize(args) -> int:
    cfg = _load_config(args)
    out_dir = _output_dir(args, cfg)
    post_path = args.posterior or os.path.join(out_dir, POSTERIOR_FILE)
    if not os.path.exists(post_path):
        raise ConfigError(f"posterior artifact not found: {post_path}")
    samples, truth, holdout_period = load_posterior(post_path)

    targets = ["mu"] + [f"beta:{lab}" for lab in samples.predictor_labels]
    targets += [f"pi:{e}" for e in (args.edge or [])]
    windows = [("all", range(len(samples.periods)))]
    windows += [_parse_window(w, samples.periods) for w in (args.window or [])]
    try:
        series = summarize(samples, targets, level=args.level)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    with _locked_output(out_dir) as out:
        written = [SUMMARY_FILE]
        with open(out / SUMMARY_FILE, "w") as fh:
            fh.write("target,t,mean,hpd_lo,hpd_hi\n")
            for s in series:
                for k, period in enumerate(samples.periods):
                    fh.write(f"{s.target},{period},{_fmt(s.mean[k])},{_fmt(s.lower[k])},{_fmt(s.upper[k])}\n")
        for name, idx in windows:
            fname = f"window_{name}.csv"
            with open(out / fname, "w") as fh:
                fh.write("i,j,weight\n")
                for i, j, wgt in window_average_network(samples, idx):
                    fh.write(f"{samples.node_labels[i]},{samples.node_labels[j]},{_fmt(wgt)}\n")
            written.append(fname)
        if truth is not None:
            obs = ~np.isnan(truth)
            score = samples.pi[:, :, -1].mean(axis=0, dtype=np.float64)
            value = auc(score[obs], truth[obs])
            (out / "holdout_auc.txt").write_text(f"{holdout_period},{_fmt(value)}\n")
            written.append("holdout_auc.txt")
            print(f"holdout AUC ({holdout_period}): {value:.4f}")
        _write_manifest(out, "summarize", {"targets": targets, "windows": [w[0] for w in windows],
                                           "level": args.level}, None, {"posterior": post_path}, written)
    print(f"wrote {', '.join(written)} to {out}")
    return EXIT_OK


# --- simulate ----------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    seed = args.seed if args.seed is not None else cfg.seed
    rng = np.random.default_rng(seed)
    covs, state = smooth_truth(args.nodes, args.periods, args.predictors, args.active, rng=rng)
    nodes = tuple(f"n{k:02d}" for k in range(args.nodes))
    periods = tuple(f"{k:04d}" for k in range(1, args.periods + 1))
    labels = tuple(f"z{p + 1}" for p in range(args.predictors))
    covs = type(covs)(covs.z, labels, nodes, periods)
    net = simulate(ModelConfig(H=state.H), covs, state, rng)
    pi = link_probability(linear_predictor(state, covs))
    with _locked_output(_output_dir(args, cfg)) as out:
        write_network(net, out / NETWORK_FILE)
        write_covariates(covs, out / COVARIATES_FILE)
        save_npz(out / "truth.npz", {"pi": pi, "mu": state.mu, "beta": state.beta, "X": state.X},
                 {"node_labels": list(nodes), "periods": list(periods), "predictor_labels": list(labels)})
        _write_manifest(out, "simulate", {"nodes": args.nodes, "periods": args.periods,
                                          "predictors": args.predictors, "active": args.active},
                        seed, {}, [NETWORK_FILE, COVARIATES_FILE, "truth.npz"])
    print(f"V={net.V} N={net.N} P={covs.P} edge_rate={np.nanmean(net.y):.3f}")
    return EXIT_OK


# --- argument parsing ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tvpnet", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--output-dir")
        p.add_argument("--seed", type=int)

    p = sub.add_parser("ingest", help="build network and covariate tables from returns and events")
    common(p)
    p.add_argument("--returns", help="period,index,log_return table")
    p.add_argument("--prices", help="period,index,price table (converted to log-returns)")
    p.add_argument("--events", help="period,country_a,country_b,channel,cooperation,conflict table")
    p.add_argument("--channels", help=f"comma list, default {','.join(CHANNELS)}")
    p.add_argument("--zero-rule", choices=("positive", "missing"), default="positive")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("fit", help="run the Gibbs sampler")
    common(p)
    p.add_argument("--network")
    p.add_argument("--covariates")
    p.add_argument("--holdout-last", action="store_true")
    p.add_argument("--H", type=int)
    p.add_argument("--n-iter", dest="n_iter", type=int)
    p.add_argument("--n-burn", dest="n_burn", type=int)
    p.add_argument("--kappa-mu", dest="kappa_mu", type=float)
    p.add_argument("--kappa-x", dest="kappa_x", type=float)
    p.add_argument("--kappa-beta", dest="kappa_beta", type=float)
    p.add_argument("--a1", type=float)
    p.add_argument("--a2", type=float)
    p.add_argument("--jitter", type=float)
    p.add_argument("--checkpoint-every", type=int, default=500)
    p.add_argument("--resume", action="store_true", help="continue from checkpoint.npz in the output dir")
    p.add_argument("--stop-after", type=int, help="halt after this many sweeps, leaving a checkpoint")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("summarize", help="posterior tables, window networks and holdout AUC")
    common(p)
    p.add_argument("--posterior", help=f"defaults to OUTPUT_DIR/{POSTERIOR_FILE}")
    p.add_argument("--edge", action="append", help="node pair A,B to summarize (repeatable)")
    p.add_argument("--window", action="append", help="NAME=START:END period labels (repeatable)")
    p.add_argument("--level", type=float, default=0.95)
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("simulate", help="synthetic data from a smooth known truth")
    common(p)
    p.add_argument("--nodes", type=int, default=15)
    p.add_argument("--periods", type=int, default=30)
    p.add_argument("--predictors", type=int, default=2)
    p.add_argument("--active", type=int, default=2)
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except AlignmentError as exc:
        print(f"alignment error: {exc}", file=sys.stderr)
        return EXIT_ALIGN
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SamplerError as exc:
        print(f"sampler error: {exc}", file=sys.stderr)
        return EXIT_SAMPLER
    except OutputLocked as exc:
        print(f"output error: {exc}", file=sys.stderr)
        return EXIT_OUTPUT
    except Exception as exc:  # noqa: BLE001
        log.exception("unexpected failure")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
