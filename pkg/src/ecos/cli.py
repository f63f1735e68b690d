"""Command-line surface: compression, scoring, sampling, runs, accounting, eval, synth.

Exit codes: 0 success, 1 runtime error, 2 usage or validation error. Errors
print a single machine-parsable line to stderr. ECOS_SEED provides a seed
fallback when --seed is not given.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import accountant, evalharness, protocol
from .cluster import kmeans_compress, load_codebook, save_codebook
from .data import load_dataset, save_dataset
from .errors import DataFormatError, EcosError, NonPrivateError, ValidationError
from .evalharness import SynthSpec, compare_methods, generate_synthetic
from .protocol import (
    STAGE_CLIENT,
    STAGE_COMPRESS,
    STAGE_DECOMPRESS,
    RunConfig,
    stage_seed,
)
from .scoring import client_report


def _resolve_seed(value) -> int:
    if value is not None:
        return int(value)
    env = os.environ.get("ECOS_SEED")
    return int(env) if env else 0


def _emit(args, payload: dict, human: str) -> None:
    if getattr(args, "json", False):
        print(json.dumps(payload, separators=(",", ":")))
    else:
        print(human)


def _compress_params(seed, r, max_iters, tol, quant_bits) -> dict:
    return {
        "seed": seed,
        "r": r,
        "kmeans_max_iters": max_iters,
        "kmeans_tol": tol,
        "quant_bits": quant_bits,
    }


def cmd_compress(args) -> int:
    seed = _resolve_seed(args.seed)
    cloud = load_dataset(args.cloud)
    codebook = kmeans_compress(
        cloud, args.r, seed=stage_seed(seed, STAGE_COMPRESS), max_iters=args.max_iters, tol=args.tol
    )
    save_codebook(
        codebook,
        args.out_codebook,
        params=_compress_params(seed, args.r, args.max_iters, args.tol, args.quant_bits),
    )
    if args.out_downlink:
        protocol.write_message(protocol.downlink_message(codebook, args.quant_bits), args.out_downlink)
    _emit(
        args,
        {"codebook": str(args.out_codebook), "r": codebook.r, "iters_run": codebook.iters_run},
        f"wrote codebook with r={codebook.r} after {codebook.iters_run} iterations to {args.out_codebook}",
    )
    return 0


def cmd_score(args) -> int:
    seed = _resolve_seed(args.seed)
    client = load_dataset(args.client)
    centroids = protocol.parse_downlink(protocol.read_message(args.downlink))
    report = client_report(
        client,
        centroids,
        sigma=args.sigma,
        gamma=args.gamma,
        scale_s=args.scale_s,
        sensitivity=args.sensitivity,
        seed=stage_seed(seed, STAGE_CLIENT),
        confidence_mode=args.confidence_mode,
        keep_fraction=args.keep_fraction,
        subsample_mode=args.subsample_mode,
    )
    protocol.write_message(protocol.uplink_message(report), args.out)
    _emit(
        args,
        {"uplink": str(args.out), "r": report.r},
        f"wrote score report for r={report.r} clusters to {args.out}",
    )
    return 0


def cmd_sample(args) -> int:
    seed = _resolve_seed(args.seed)
    cloud = load_dataset(args.cloud)
    codebook = load_codebook(args.codebook)
    report = protocol.parse_uplink(protocol.read_message(args.uplink))
    if report.r != codebook.r:
        raise ValidationError(f"uplink r={report.r} does not match codebook r={codebook.r}")
    plan = protocol.allocate_budgets(codebook.cluster_sizes, report.scores, args.budget)
    selection = protocol.decompress(
        cloud, codebook, plan, seed=stage_seed(seed, STAGE_DECOMPRESS)
    )
    ledger = accountant.ledger_for_query(
        report.sigma, report.gamma, report.sensitivity, args.subsample_mode
    )
    wire = protocol.wire_stats(codebook.r, cloud.dim, args.quant_bits)
    config = RunConfig(
        r=codebook.r,
        budget=args.budget,
        scale_s=report.scale_s,
        sigma=report.sigma,
        gamma=report.gamma,
        sensitivity=report.sensitivity,
        seed=seed,
        quant_bits=args.quant_bits,
        confidence_mode=report.confidence_mode,
        subsample_mode=args.subsample_mode,
        delta=args.delta,
    )
    selection.params = config.sampling_params()
    selection.bytes_down = wire.bytes_down
    selection.bytes_up = wire.bytes_up
    protocol.write_message(protocol.selection_message(selection, config, ledger, wire), args.out)
    _emit(
        args,
        {"selection": str(args.out), "selected": int(selection.indices.size), "budget_total": plan.total},
        f"selected {selection.indices.size} rows (plan total {plan.total}) into {args.out}",
    )
    return 0


def cmd_run(args) -> int:
    seed = _resolve_seed(args.seed)
    cloud = load_dataset(args.cloud)
    client = load_dataset(args.client)
    config = RunConfig(
        r=args.r,
        budget=args.budget,
        scale_s=args.scale_s,
        sigma=args.sigma,
        gamma=args.gamma,
        sensitivity=args.sensitivity,
        seed=seed,
        quant_bits=args.quant_bits,
        confidence_mode=args.confidence_mode,
        subsample_mode=args.subsample_mode,
        keep_fraction=args.keep_fraction,
        kmeans_max_iters=args.max_iters,
        kmeans_tol=args.tol,
        delta=args.delta,
    )
    result = protocol.run_protocol(cloud, client, config)
    paths = protocol.write_transcript(result, args.out_dir, compress_params=_compress_params(
        seed, args.r, args.max_iters, args.tol, args.quant_bits
    ))
    eps, _ = result.ledger.epsilon(config.delta)
    _emit(
        args,
        {
            "selection": str(paths["selection"]),
            "selected": int(result.selection.indices.size),
            "epsilon": eps,
            "bytes_down": result.wire.bytes_down,
            "bytes_up": result.wire.bytes_up,
        },
        f"selected {result.selection.indices.size} rows; "
        f"epsilon={'non-private' if eps is None else f'{eps:.4f}'}; transcript in {args.out_dir}",
    )
    return 0


def cmd_account(args) -> int:
    if args.mode == "closed-form":
        eps = accountant.closed_form_bound(args.sigma, args.gamma, args.delta)
        _emit(
            args,
            {"mode": args.mode, "epsilon": eps, "sigma": args.sigma, "gamma": args.gamma, "delta": args.delta},
            f"epsilon = {eps:.6f} (closed form, sigma={args.sigma}, gamma={args.gamma}, delta={args.delta})",
        )
        return 0
    try:
        curve = accountant.subsampled_gaussian_rdp(
            args.sigma, args.sensitivity, args.gamma, accountant.default_orders(args.gamma)
        )
    except NonPrivateError:
        _emit(
            args,
            {"mode": args.mode, "non_private": True, "epsilon": None},
            "non-private: sigma == 0 gives no finite epsilon",
        )
        return 0
    eps, best_alpha = accountant.rdp_to_dp(curve, args.delta)
    _emit(
        args,
        {
            "mode": args.mode,
            "epsilon": eps,
            "best_alpha": best_alpha,
            "sigma": args.sigma,
            "gamma": args.gamma,
            "sensitivity": args.sensitivity,
            "delta": args.delta,
        },
        f"epsilon = {eps:.6f} at alpha = {best_alpha:g} "
        f"(exact, sigma={args.sigma}, gamma={args.gamma}, sensitivity={args.sensitivity}, delta={args.delta})",
    )
    return 0


def cmd_eval(args) -> int:
    seed_list = [int(s) for s in args.seeds.split(",") if s]
    methods = tuple(m for m in args.methods.split(",") if m)
    cloud = load_dataset(args.cloud)
    client = load_dataset(args.client)
    client_domains = (
        tuple(int(d) for d in args.client_domains.split(",")) if args.client_domains else None
    )
    config = RunConfig(
        r=args.r,
        scale_s=args.scale_s,
        sigma=args.sigma,
        gamma=args.gamma,
        sensitivity=args.sensitivity,
        quant_bits=args.quant_bits,
        confidence_mode=args.confidence_mode,
        subsample_mode=args.subsample_mode,
        delta=args.delta,
    )
    reports = compare_methods(
        cloud, client, args.budget, seed_list, methods=methods, config=config, client_domains=client_domains
    )
    if args.out_csv:
        evalharness.write_csv(reports, args.out_csv)
    summary = evalharness.aggregate_reports(reports)
    if args.json:
        print(json.dumps(summary, separators=(",", ":")))
    else:
        for method, stats in summary.items():
            parts = ", ".join(f"{k}={v['mean']:.4f}+-{v['std']:.4f}" for k, v in stats.items())
            print(f"{method}: {parts}")
    return 0


def cmd_synth(args) -> int:
    spec = SynthSpec(
        domains=args.domains,
        dim=args.dim,
        cloud_per_domain=args.per_domain,
        client_size=args.client_size,
        client_domains=tuple(int(d) for d in args.client_domains.split(",")),
        separation=args.separation,
        blob_std=args.blob_std,
        classes=args.classes,
        seed=_resolve_seed(args.seed),
        client_from_cloud=args.client_from_cloud,
    )
    cloud, client = generate_synthetic(spec)
    save_dataset(cloud, args.out_cloud)
    save_dataset(client, args.out_client)
    _emit(
        args,
        {"cloud": str(args.out_cloud), "cloud_n": cloud.n, "client": str(args.out_client), "client_n": client.n},
        f"wrote cloud n={cloud.n} to {args.out_cloud} and client n={client.n} to {args.out_client}",
    )
    return 0


def _add_seed(p):
    p.add_argument("--seed", type=int, default=None, help="run seed (default: $ECOS_SEED or 0)")


def _add_json(p):
    p.add_argument("--json", action="store_true", help="machine-readable stdout")


def _add_mechanism_flags(p):
    p.add_argument("--sigma", type=float, default=25.0, help="gaussian noise std on the counts")
    p.add_argument("--gamma", type=float, default=1.0, help="client subsampling rate in (0, 1]")
    p.add_argument("--scale-s", type=float, default=1.0, dest="scale_s", help="score power exponent")
    p.add_argument("--sensitivity", type=float, default=2.0, help="assumed L2 sensitivity of the count vector")
    p.add_argument("--confidence-mode", action="store_true", dest="confidence_mode")
    p.add_argument("--keep-fraction", type=float, default=0.7, dest="keep_fraction")
    p.add_argument(
        "--subsample-mode", choices=("poisson", "with_replacement"), default="poisson", dest="subsample_mode"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ecos", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compress", help="cluster the cloud features into R centroids")
    p.add_argument("--cloud", required=True)
    p.add_argument("--r", type=int, default=100)
    p.add_argument("--max-iters", type=int, default=100, dest="max_iters")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--quant-bits", type=int, choices=(8, 32), default=32, dest="quant_bits")
    p.add_argument("--out-codebook", required=True, dest="out_codebook")
    p.add_argument("--out-downlink", default=None, dest="out_downlink")
    _add_seed(p)
    _add_json(p)
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("score", help="client end: score the downloaded centroids")
    p.add_argument("--client", required=True)
    p.add_argument("--downlink", required=True)
    p.add_argument("--out", required=True)
    _add_mechanism_flags(p)
    _add_seed(p)
    _add_json(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("sample", help="cloud end: budget and decompress from an uplink file")
    p.add_argument("--cloud", required=True)
    p.add_argument("--codebook", required=True)
    p.add_argument("--uplink", required=True)
    p.add_argument("--budget", type=int, required=True)
    p.add_argument("--quant-bits", type=int, choices=(8, 32), default=32, dest="quant_bits")
    p.add_argument("--delta", type=float, default=accountant.DEFAULT_DELTA)
    p.add_argument(
        "--subsample-mode", choices=("poisson", "with_replacement"), default="poisson", dest="subsample_mode"
    )
    p.add_argument("--out", required=True)
    _add_seed(p)
    _add_json(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("run", help="single-process end-to-end protocol run")
    p.add_argument("--cloud", required=True)
    p.add_argument("--client", required=True)
    p.add_argument("--r", type=int, default=100)
    p.add_argument("--budget", type=int, required=True)
    p.add_argument("--max-iters", type=int, default=100, dest="max_iters")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--quant-bits", type=int, choices=(8, 32), default=32, dest="quant_bits")
    p.add_argument("--delta", type=float, default=accountant.DEFAULT_DELTA)
    p.add_argument("--out-dir", required=True, dest="out_dir")
    _add_mechanism_flags(p)
    _add_seed(p)
    _add_json(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("account", help="privacy accounting for the scoring query")
    p.add_argument("--mode", choices=("closed-form", "exact"), required=True)
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--delta", type=float, default=accountant.DEFAULT_DELTA)
    p.add_argument("--sensitivity", type=float, default=2.0)
    _add_json(p)
    p.set_defaults(func=cmd_account)

    p = sub.add_parser("eval", help="method comparison sweep on a cloud/client pair")
    p.add_argument("--cloud", required=True)
    p.add_argument("--client", required=True)
    p.add_argument("--budget", type=int, required=True)
    p.add_argument("--seeds", default="1,2,3")
    p.add_argument("--methods", default="ecos,random,kcenter")
    p.add_argument("--client-domains", default=None, dest="client_domains")
    p.add_argument("--r", type=int, default=100)
    p.add_argument("--quant-bits", type=int, choices=(8, 32), default=32, dest="quant_bits")
    p.add_argument("--delta", type=float, default=accountant.DEFAULT_DELTA)
    p.add_argument("--out-csv", default=None, dest="out_csv")
    _add_mechanism_flags(p)
    _add_json(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate a synthetic multi-domain benchmark pair")
    p.add_argument("--out-cloud", required=True, dest="out_cloud")
    p.add_argument("--out-client", required=True, dest="out_client")
    p.add_argument("--domains", type=int, default=5)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--per-domain", type=int, default=2000, dest="per_domain")
    p.add_argument("--client-size", type=int, default=500, dest="client_size")
    p.add_argument("--client-domains", default="0", dest="client_domains")
    p.add_argument("--separation", type=float, default=10.0)
    p.add_argument("--blob-std", type=float, default=1.0, dest="blob_std")
    p.add_argument("--classes", type=int, default=0)
    p.add_argument("--client-from-cloud", action="store_true", dest="client_from_cloud")
    _add_seed(p)
    _add_json(p)
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, DataFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except EcosError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
