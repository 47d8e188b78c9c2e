"""Command-line driver: ``rmq {vq,rmq,price,convergence,dist-error}``."""
import argparse
import logging
import sys

import numpy as np

from rmq.config import RunConfig, read_config_file
from rmq.distributions import Ncx2Params, ncx2_1_funcs, std_normal_funcs
from rmq.engine import BoundaryMode, rmq_run
from rmq.errors import ConfigError, NegativeCodewordError, NumericalFailure, RmqError
from rmq.export import grid_csv, rows_to_csv, rows_to_json, sequence_json, write_text
from rmq.oracles import FdConfig, McConfig, black_scholes, cn_solve, empirical_cdf, mc_price
from rmq.pricing import BarrierSpec, VanillaPayoff, price_many
from rmq.sde_models import gbm_exact_marginal
from rmq.vq1d import initial_guess, newton_quantize

logger = logging.getLogger("rmq")

VQ_CONVERGED = 1e-8
PRICE_COLUMNS = ("scheme", "instrument", "strike", "level", "price", "reference", "abs_error", "std_error")

# flag dest -> RunConfig field
_CONFIG_FLAGS = {
    "model": "model",
    "s0": "s0",
    "r": "r",
    "sigma": "sigma",
    "alpha": "alpha",
    "sigma_ln": "sigma_ln",
    "scheme": "scheme",
    "boundary": "boundary",
    "T": "T",
    "K": "K",
    "N": "N",
    "iters_vq": "n_max_vq",
    "iters_rmq": "n_max_rmq",
}


def grid_spec(text):
    """Parse ``a:b:n`` into n evenly spaced values from a to b."""
    try:
        a, b, n = text.split(":")
        a, b, n = float(a), float(b), int(n)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a:b:n, got {text!r}") from None
    if n < 1:
        raise argparse.ArgumentTypeError("grid needs at least one point")
    return np.linspace(a, b, n)


def int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def name_list(text):
    return [v.strip().lower() for v in text.split(",") if v.strip()]


def _common_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value file; flags override its values")
    common.add_argument("--model", choices=("gbm", "cev"))
    common.add_argument("--s0", type=float)
    common.add_argument("--r", type=float)
    common.add_argument("--sigma", type=float, help="GBM volatility")
    common.add_argument("--alpha", type=float, help="CEV elasticity")
    common.add_argument("--sigma-ln", dest="sigma_ln", type=float, help="CEV lognormal volatility")
    common.add_argument("--scheme", choices=("euler", "milstein", "weak2"))
    common.add_argument("--boundary", choices=[m.value for m in BoundaryMode])
    common.add_argument("--T", type=float)
    common.add_argument("--K", type=int)
    common.add_argument("--N", type=int)
    common.add_argument("--iters-vq", dest="iters_vq", type=int)
    common.add_argument("--iters-rmq", dest="iters_rmq", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--out", help="output file (default: stdout)")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("-v", "--verbose", action="store_true")
    return common


def build_parser():
    common = _common_parser()
    parser = argparse.ArgumentParser(prog="rmq", description="Recursive marginal quantization toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    vq = sub.add_parser("vq", parents=[common], help="quantize a standard law")
    vq.add_argument("--dist", required=True, help="normal or ncx2")
    vq.add_argument("--lambda", dest="lam", type=float, default=0.0)
    vq.add_argument("--n", type=int, default=50)
    vq.add_argument("--iters", type=int, default=50)
    vq.set_defaults(handler=cmd_vq)

    run = sub.add_parser("rmq", parents=[common], help="run the quantization recursion")
    run.set_defaults(handler=cmd_rmq)

    price = sub.add_parser("price", parents=[common], help="price a strike or barrier grid")
    price.add_argument("instrument", choices=("european", "bermudan", "barrier"))
    price.add_argument("--kind", choices=("put", "call"), default="put")
    price.add_argument("--strikes", type=grid_spec, default=grid_spec("1:1:1"), help="multiples of s0")
    price.add_argument("--levels", type=grid_spec, default=grid_spec("1.05:1.5:10"), help="multiples of the strike")
    price.add_argument("--no-reference", action="store_true")
    price.add_argument("--mc-paths", type=int, default=1_000_000)
    price.add_argument("--mc-steps", type=int, default=1200)
    price.add_argument("--fd-time-steps", type=int, default=600)
    price.add_argument("--fd-space-steps", type=int, default=800)
    price.set_defaults(handler=cmd_price)

    conv = sub.add_parser("convergence", parents=[common], help="weak-order regression of the first moment")
    conv.add_argument("--Ks", type=int_list, default=[2, 4, 8, 16, 32, 64])
    conv.add_argument("--schemes", type=name_list, default=["euler", "milstein", "weak2"])
    conv.set_defaults(handler=cmd_convergence)

    dist = sub.add_parser("dist-error", parents=[common], help="implied marginal cdf against a reference")
    dist.add_argument("--schemes", type=name_list, default=["euler", "milstein", "weak2"])
    dist.add_argument("--points", type=int, default=1000)
    dist.add_argument("--samples", type=int, default=200_000, help="Monte Carlo samples for CEV")
    dist.set_defaults(handler=cmd_dist_error)
    return parser


def run_config(args, **defaults):
    values = dict(defaults)
    if args.config:
        values.update(read_config_file(args.config))
    for flag, key in _CONFIG_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            values[key] = value
    return RunConfig.from_mapping(values)


def _emit(args, text):
    if args.out:
        write_text(args.out, text)
    else:
        sys.stdout.write(text)


def _emit_rows(args, schema, columns, rows, **extra):
    if args.format == "json":
        _emit(args, rows_to_json(schema, rows, **extra) + "\n")
    else:
        _emit(args, rows_to_csv(schema, columns, rows))


def _require_seed(args, purpose):
    if args.seed is None:
        raise ConfigError(f"{purpose} uses Monte Carlo; pass --seed")
    return args.seed


def cmd_vq(args):
    if args.dist == "normal":
        law, guess = std_normal_funcs(), initial_guess("normal", args.n)
    elif args.dist == "ncx2":
        law = ncx2_1_funcs(Ncx2Params(args.lam))
        guess = initial_guess("ncx2", args.n, args.lam)
    else:
        raise ConfigError(f"unknown distribution {args.dist!r}; expected normal or ncx2")
    quantizer = newton_quantize(law, guess, args.iters)
    rows = [
        {"index": i, "codeword": float(x), "probability": float(p)}
        for i, (x, p) in enumerate(zip(quantizer.codewords, quantizer.probabilities))
    ]
    _emit_rows(args, "rmq.vq.v1", ("index", "codeword", "probability"), rows, residual=quantizer.residual)
    if not quantizer.residual < VQ_CONVERGED:
        raise NumericalFailure(f"vq did not converge: residual {quantizer.residual:.3e} after {args.iters} iterations")
    logger.info(f"vq: {args.dist} N={args.n}, residual {quantizer.residual:.3e}")
    return 0


def _run(cfg, threads, scheme=None, K=None):
    if K is not None:
        cfg = RunConfig.from_mapping({**cfg.to_dict(), "K": K})
    return rmq_run(
        cfg.sde_model(),
        scheme or cfg.scheme,
        cfg.s0,
        cfg.schedule(),
        boundary=cfg.boundary_mode(),
        threads=threads,
    )


def cmd_rmq(args):
    cfg = run_config(args)
    seq = _run(cfg, args.threads)
    _emit(args, sequence_json(seq) + "\n" if args.format == "json" else grid_csv(seq))
    return 0


def _reference_prices(args, cfg, instrument, payoffs, levels):
    """(reference, std_error) per payoff from the matching oracle."""
    model = cfg.sde_model()
    if instrument == "european" and cfg.model == "gbm":
        return [(black_scholes(p.kind, cfg.s0, p.strike, cfg.r, cfg.sigma, cfg.T), np.nan) for p in payoffs]
    if instrument == "bermudan":
        fd = FdConfig(time_steps=args.fd_time_steps, space_steps=args.fd_space_steps)
        dates = [cfg.T * k / cfg.K for k in range(1, cfg.K)]
        return [(cn_solve(model, p, cfg.s0, cfg.r, cfg.T, fd, dates).price, np.nan) for p in payoffs]
    seed = _require_seed(args, f"the {instrument} reference")
    mc = McConfig(
        seed=seed,
        paths=args.mc_paths,
        steps=args.mc_steps,
        monitoring_stride=args.mc_steps // cfg.K if args.mc_steps % cfg.K == 0 else args.mc_steps,
        boundary=cfg.boundary if cfg.model == "cev" else "free",
        exact=False,
        threads=args.threads,
    )
    out = []
    for p, level in zip(payoffs, levels):
        result = mc_price(model, p, mc, cfg.s0, cfg.r, cfg.T, barrier_level=level)
        out.append((result.price, result.std_error))
    return out


def cmd_price(args):
    cfg = run_config(args)
    if args.instrument == "barrier" and args.mc_steps % cfg.K:
        raise ConfigError(f"--mc-steps ({args.mc_steps}) must be a multiple of K ({cfg.K})")
    strikes = args.strikes * cfg.s0
    payoffs, levels = [], []
    for strike in strikes:
        if args.instrument == "barrier":
            for mult in args.levels:
                payoffs.append(VanillaPayoff(args.kind, float(strike)))
                levels.append(float(mult * strike))
        else:
            payoffs.append(VanillaPayoff(args.kind, float(strike)))
            levels.append(None)
    seq = _run(cfg, args.threads)
    barriers = [BarrierSpec(level) if level is not None else None for level in levels]
    prices = price_many(seq, payoffs, cfg.r, instrument=args.instrument, barriers=barriers, threads=args.threads)
    if args.no_reference:
        references = [(np.nan, np.nan)] * len(prices)
    else:
        references = _reference_prices(args, cfg, args.instrument, payoffs, levels)
    rows = []
    for payoff, level, value, (ref, err) in zip(payoffs, levels, prices, references):
        rows.append(
            {
                "scheme": cfg.scheme,
                "instrument": args.instrument,
                "strike": payoff.strike,
                "level": np.nan if level is None else level,
                "price": value,
                "reference": ref,
                "abs_error": abs(value - ref),
                "std_error": err,
            }
        )
    _emit_rows(args, "rmq.prices.v1", PRICE_COLUMNS, rows)
    return 0


def weak_order(dts, errors):
    """Least-squares slope of log2 error against log2 step size."""
    errors = np.maximum(np.asarray(errors, dtype=float), 1e-300)
    slope, _ = np.polyfit(np.log2(dts), np.log2(errors), 1)
    return float(slope)


def cmd_convergence(args):
    Ks = sorted(set(args.Ks))
    if len(Ks) < 3:
        raise ConfigError("convergence needs at least three distinct K values")
    cfg = run_config(args, N=1000)
    target = cfg.s0 * np.exp(cfg.r * cfg.T)
    rows = []
    slopes = {}
    for scheme in args.schemes:
        dts, errors, scheme_rows = [], [], []
        for K in Ks:
            seq = _run(cfg, args.threads, scheme=scheme, K=K)
            mean = float(seq.probabilities(seq.K) @ seq.states(seq.K))
            dts.append(cfg.T / K)
            errors.append(abs(mean - target))
            scheme_rows.append({"scheme": scheme, "K": K, "dt": cfg.T / K, "mean": mean, "abs_error": errors[-1]})
        slopes[scheme] = weak_order(dts, errors)
        for row in scheme_rows:
            row["beta"] = slopes[scheme]
        rows.extend(scheme_rows)
        logger.info(f"convergence: {scheme} beta={slopes[scheme]:.3f}")
    _emit_rows(
        args, "rmq.convergence.v1", ("scheme", "K", "dt", "mean", "abs_error", "beta"), rows, slopes=slopes
    )
    return 0


def cmd_dist_error(args):
    cfg = run_config(args)
    if cfg.model == "gbm":
        reference = gbm_exact_marginal(cfg.params(), cfg.T)
    else:
        seed = _require_seed(args, "the CEV reference distribution")
        reference = empirical_cdf(
            cfg.sde_model(), cfg.s0, cfg.T, args.samples, seed, boundary=cfg.boundary
        )
    rows = []
    sup = {}
    for scheme in args.schemes:
        seq = _run(cfg, args.threads, scheme=scheme)
        final = seq.step(seq.K).quantizer.codewords
        x = np.linspace(final[0], final[-1], args.points)
        error = seq.implied_cdf(seq.K, x) - reference.cdf(x)
        sup[scheme] = float(np.max(np.abs(error)))
        rows.extend(
            {"scheme": scheme, "x": float(xi), "error": float(e), "sup_error": sup[scheme]}
            for xi, e in zip(x, error)
        )
        logger.info(f"dist-error: {scheme} sup-norm {sup[scheme]:.3e}")
    _emit_rows(args, "rmq.dist_error.v1", ("scheme", "x", "error", "sup_error"), rows, sup_error=sup)
    return 0


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.handler(args)
    except NegativeCodewordError as exc:
        logger.error(f"{exc} (step {exc.step})")
        return 1
    except NumericalFailure as exc:
        logger.error(str(exc))
        return 1
    except RmqError as exc:
        parser.print_usage(sys.stderr)
        print(f"rmq: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
