"""
FMD-analysis: privacy analysis of Fuzzy Message Detection
Main command-line entry point
"""
import argparse
import os
import sys
from typing import List, Optional

from dotenv import load_dotenv

# Load environment variables
load_dotenv()

import numpy as np
import pandas as pd

from components import anonymity_metrics, attacks_stat, dp_calc, game_theory
from components.experiments import run_reproduction
from components.fmd_model import dyadic_rate, parse_rate
from components.network_data import assign_rates, degree_frame, degree_stats, load_edge_list, save_edge_list
from components.simulator import (
    Backend,
    EpochMode,
    FuzzyDownloads,
    SimulationRun,
    epoch_frame,
    partition_epochs,
    simulate,
    tag_frame,
    user_epoch_profile,
)
from utils.config import BACKENDS, EPOCH_MODES, Config, ExperimentConfig
from utils.errors import ArgumentError, ConfigError, FmdError
from utils.helpers import (
    STREAM_GAME,
    STREAM_MONTE_CARLO,
    STREAM_RATES,
    configure_logging,
    dataset_slug,
    entropy_seed,
    format_float,
    get_logger,
    keyed_rng,
    parse_int_list,
)
from utils.reporting import ReportWriter, dataframe_to_csv_text, json_text

logger = get_logger("fmd")

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


def _int_list(text: str) -> List[int]:
    try:
        return parse_int_list(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e))


def _rate(text: str) -> float:
    try:
        return parse_rate(text).value
    except ArgumentError as e:
        raise argparse.ArgumentTypeError(str(e))


def _resolve_seed(seed: Optional[int]) -> int:
    """Use the given seed or draw one and print it so the run can be repeated"""
    if seed is not None:
        return seed
    seed = entropy_seed()
    print(f"seed: {seed}", file=sys.stderr)
    return seed


def _threads(value: int) -> int:
    return value or (os.cpu_count() or 1)


def _emit(text: str, output: Optional[str]):
    """Write a result to a file (atomically) or to stdout"""
    if output:
        writer = ReportWriter(os.path.dirname(os.path.abspath(output)))
        writer.write_text(os.path.basename(output), text)
        logger.info(f"✅ Wrote {output}")
    else:
        sys.stdout.write(text)


def _output_dir(args, cfg: Config) -> str:
    return args.output_dir or cfg.output_dir


def _rate_set(exponents: List[int]):
    return [dyadic_rate(l) for l in exponents]


# ---------------------------------------------------------------- ingest

def cmd_ingest(args, cfg: Config) -> int:
    graph = load_edge_list(args.dataset)
    stats = degree_stats(graph)
    seed = _resolve_seed(args.seed)
    rates = assign_rates(graph, _rate_set(args.rates), keyed_rng(seed, STREAM_RATES, args.fold))

    writer = ReportWriter(os.path.join(_output_dir(args, cfg), dataset_slug(args.dataset)))
    writer.write_csv("degrees.csv", degree_frame(graph, stats, rates))
    if args.save_edges:
        save_edge_list(graph, args.save_edges)
        logger.info(f"✅ Saved normalized edge list to {args.save_edges}")
    print(f"users={graph.user_count} messages={graph.message_count} "
          f"self_loops_dropped={graph.self_loops_dropped}")
    print(writer.path("degrees.csv"))
    return EXIT_OK


# ---------------------------------------------------------------- simulate

def cmd_simulate(args, cfg: Config) -> int:
    graph = load_edge_list(args.dataset)
    stats = degree_stats(graph)
    seed = _resolve_seed(args.seed)
    threads = _threads(args.threads)
    rates = assign_rates(graph, _rate_set(args.rates), keyed_rng(seed, STREAM_RATES, args.fold))

    run = SimulationRun(seed, args.fold, Backend(args.backend))
    table = simulate(graph, rates, run, stats=stats, threads=threads)
    epoch_run = SimulationRun(seed, args.fold, Backend.PER_MESSAGE)
    partition = partition_epochs(graph, FuzzyDownloads(graph, rates, epoch_run), args.epoch_size,
                                 EpochMode(args.epoch_mode), threads=threads)

    writer = ReportWriter(os.path.join(_output_dir(args, cfg), dataset_slug(args.dataset)))
    writer.write_csv("tags.csv", tag_frame(graph, table, stats))
    writer.write_csv("epochs.csv", epoch_frame(graph, partition))

    if args.profile_user is not None:
        matches = np.flatnonzero(graph.original_ids == args.profile_user)
        if matches.size == 0:
            raise ArgumentError(f"user {args.profile_user} does not appear in {args.dataset}")
        profile = user_epoch_profile(graph, int(matches[0]), _rate_set(args.profile_exponents), epoch_run,
                                     args.epoch_size, EpochMode(args.epoch_mode))
        writer.write_csv(f"profile_user_{args.profile_user}.csv", profile)

    print(f"fuzzy_edges={table.fuzzy_edge_count} epochs={partition.epoch_count}")
    for path in writer.written:
        print(path)
    return EXIT_OK


# ---------------------------------------------------------------- reproduce

def cmd_reproduce(args, cfg: Config) -> int:
    overrides = {
        "dataset_path": args.dataset,
        "rate_exponents": args.rates,
        "folds": args.folds,
        "seed": args.seed,
        "alpha": args.alpha,
        "epoch_size": args.epoch_size,
        "epoch_mode": args.epoch_mode,
        "relationship_backend": args.backend,
        "unordered_pairs": True if args.unordered else None,
        "threads": args.threads,
        "output_dir": args.output_dir,
    }
    experiment = ExperimentConfig.from_sources(cfg, overrides)
    experiment = experiment.with_seed(_resolve_seed(experiment.seed))
    summary = run_reproduction(experiment)
    metrics = summary["metrics"]
    print(f"relationship precision={format_float(metrics['relationship_precision']['mean'], 4)} "
          f"recall={format_float(metrics['relationship_recall']['mean'], 4)}")
    print(f"tda precision={format_float(metrics['tda_precision']['mean'], 4)} "
          f"recall={format_float(metrics['tda_recall']['mean'], 4)}")
    for path in summary["files"]:
        print(path)
    return EXIT_OK


# ---------------------------------------------------------------- calc

def calc_ru(args) -> str:
    if args.heatmap:
        U_grid = anonymity_metrics.log_grid(10, args.max_users, args.points, integer=True)
        p_grid = anonymity_metrics.log_grid(1e-4, 0.5, args.points)
        return dataframe_to_csv_text(anonymity_metrics.ru_heatmap(U_grid, p_grid))
    if args.U is None or args.p is None:
        raise ArgumentError("calc ru needs --U and --p (or --heatmap)")
    estimates = [anonymity_metrics.ru_advantage_approx(args.U, args.p)]
    uniform = [args.p] * args.U
    if args.exact:
        estimates.append(anonymity_metrics.ru_advantage_exact(uniform))
    if args.trials:
        seed = _resolve_seed(args.seed)
        overall, conditional = anonymity_metrics.ru_game_montecarlo(
            uniform, args.trials, keyed_rng(seed, STREAM_MONTE_CARLO), threads=_threads(args.threads))
        estimates.append(conditional)
    if len(estimates) == 1:
        return format_float(estimates[0].value) + "\n"
    frame = pd.DataFrame([{"kind": e.kind.value, "value": e.value, "trials": e.trials, "std_error": e.std_error}
                          for e in estimates])
    return dataframe_to_csv_text(frame)


def calc_intersection(args) -> str:
    expected, residual = anonymity_metrics.intersection_attack(args.U, args.p, args.l)
    if not args.trials:
        return format_float(expected) + "\n"
    seed = _resolve_seed(args.seed)
    sizes = anonymity_metrics.simulate_intersection(args.U, args.p, args.l, args.trials,
                                                    keyed_rng(seed, STREAM_MONTE_CARLO))
    simulated_var = float(sizes.var(ddof=1)) if sizes.size > 1 else 0.0
    frame = pd.DataFrame([{"expected": expected, "variance": float(residual.frozen().var()),
                           "simulated_mean": float(sizes.mean()), "simulated_var": simulated_var,
                           "trials": int(sizes.size)}])
    return dataframe_to_csv_text(frame)


def calc_sybil(args) -> str:
    return format_float(anonymity_metrics.sybil_pinpoint_prob(args.U, args.K, args.N), 10) + "\n"


def calc_peedp(args) -> str:
    return format_float(dp_calc.peedp_epsilon(args.p)) + "\n"


def calc_incoming_dp(args) -> str:
    if args.table:
        return dataframe_to_csv_text(dp_calc.exemplary_table())
    if args.M is None or args.in_count is None or args.p is None:
        raise ArgumentError("calc incoming-dp needs --M, --in and --p (or --table)")
    params = dp_calc.incoming_dp(args.M, args.in_count, args.p)
    row = {"M": args.M, "in": args.in_count, "p": args.p,
           "epsilon": params.epsilon, "log10_delta": params.log10_delta, "delta": params.delta_text}
    if args.replay:
        replay = dp_calc.replay_incoming_dp(args.M, args.in_count, args.p)
        row.update({"max_log_ratio": replay.max_log_ratio, "violating_mass": replay.violating_mass,
                    "violating_mass_reverse": replay.violating_mass_reverse, "holds": replay.holds})
    return dataframe_to_csv_text(pd.DataFrame([row]))


def calc_min_expose(args) -> str:
    if args.outs:
        return dataframe_to_csv_text(attacks_stat.min_exposing_curve(args.outs, args.exponents, args.alpha))
    if args.out is None or args.p is None:
        raise ArgumentError("calc min-expose needs --out and --p (or --outs)")
    value = attacks_stat.min_exposing_messages(args.out, args.p, args.alpha)
    return ("none" if value is None else str(value)) + "\n"


def calc_min_rate(args) -> str:
    if args.epoch_messages_list:
        return dataframe_to_csv_text(attacks_stat.min_rate_curve(args.epoch_messages_list, args.in_values, args.alpha))
    if args.epoch_messages is None or args.in_count is None:
        raise ArgumentError("calc min-rate needs --epoch-messages and --in (or --epoch-messages-list)")
    return format_float(attacks_stat.min_rate_for_tda(args.epoch_messages, args.in_count, args.alpha)) + "\n"


CALCULATORS = {
    "ru": calc_ru,
    "intersection": calc_intersection,
    "sybil": calc_sybil,
    "peedp": calc_peedp,
    "incoming-dp": calc_incoming_dp,
    "min-expose": calc_min_expose,
    "min-rate": calc_min_rate,
}


def cmd_calc(args, cfg: Config) -> int:
    _emit(CALCULATORS[args.calculator](args), args.output)
    return EXIT_OK


# ---------------------------------------------------------------- game

def _game_config(args) -> game_theory.GameConfig:
    if args.game_config:
        return game_theory.game_config_from_file(args.game_config)
    if args.dataset:
        stats = degree_stats(load_edge_list(args.dataset))
        return game_theory.GameConfig.from_degrees(stats.in_degree, args.f, args.L)
    raise ConfigError("game commands need --game-config FILE or --dataset PATH")


def _profile_summary(profile: game_theory.StrategyProfile, full: bool) -> dict:
    summary = {"max_rate": float(profile.rates.max()), "nonzero_rates": int(np.count_nonzero(profile.rates))}
    if full:
        summary["rates"] = profile.rates.tolist()
    return summary


def _start_profile(args, game: game_theory.GameConfig) -> game_theory.StrategyProfile:
    if args.profile:
        values = [parse_rate(v).value for v in args.profile.split(",") if v.strip()]
        return game_theory.StrategyProfile(np.asarray(values))
    if args.rate is not None:
        return game_theory.StrategyProfile.constant(game.user_count, args.rate)
    seed = _resolve_seed(args.seed)
    return game_theory.StrategyProfile.random(game.user_count, keyed_rng(seed, STREAM_GAME))


def game_br(args, game) -> dict:
    start = _start_profile(args, game)
    result = game_theory.br_dynamics(start, game, args.max_iters, args.grid, record_trajectory=args.full)
    p_star, so_welfare = game_theory.optimal_uniform_p(game, args.grid)
    final_welfare = game_theory.profile_welfare(result.final, game)
    report = {
        "converged": result.converged,
        "iterations": result.iterations,
        "changes": result.changes,
        "initial": _profile_summary(start, args.full),
        "trajectory": [{"user": user, "rate": rate} for user, rate in result.moves],
        "potential_trace": result.potential_trace,
        "final": _profile_summary(result.final, args.full),
        "final_is_nash": game_theory.is_nash(result.final, game, args.grid),
        "so_comparison": {
            "so_condition": game_theory.so_condition(game),
            "p_star": p_star,
            "so_welfare": so_welfare,
            "final_welfare": final_welfare,
            "welfare_gap": so_welfare - final_welfare,
        },
    }
    if args.full:
        report["profiles"] = result.trajectory
    return report


def game_nash_check(args, game) -> dict:
    if args.profile or args.rate is not None:
        profile = _start_profile(args, game)
    else:
        profile = game_theory.StrategyProfile.constant(game.user_count, 0.0)
    return {"is_nash": game_theory.is_nash(profile, game, args.grid),
            "profile": _profile_summary(profile, args.full),
            "potential": game_theory.potential(profile, game)}


def game_so(args, game) -> dict:
    p_star, so_welfare = game_theory.optimal_uniform_p(game, args.grid)
    report = {"so_condition": game_theory.so_condition(game), "p_star": p_star, "welfare": so_welfare,
              "welfare_at_zero": game_theory.welfare(0.0, game)}
    report["price_of_stability"] = game_theory.price_of_stability(game, args.grid)
    return report


def game_potential_check(args, game) -> dict:
    seed = _resolve_seed(args.seed)
    worst = game_theory.potential_check(game, args.samples, keyed_rng(seed, STREAM_GAME))
    return {"samples": args.samples, "max_relative_violation": worst, "holds": worst <= 1e-9}


GAME_ROUTINES = {
    "br": game_br,
    "nash-check": game_nash_check,
    "so": game_so,
    "potential-check": game_potential_check,
}


def cmd_game(args, cfg: Config) -> int:
    game = _game_config(args)
    report = {"routine": args.routine, "U": game.user_count, "M": game.M, "f": game.f, "L": game.L,
              "config": game.to_dict()}
    report.update(GAME_ROUTINES[args.routine](args, game))
    _emit(json_text(report), args.output)
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fmd", description="Privacy analysis of Fuzzy Message Detection")
    parser.add_argument("--config", help="flat JSON config file (default: $FMD_CONFIG_FILE)")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging")
    parser.add_argument("-q", "--quiet", action="count", default=0, help="warnings only")
    commands = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="master seed (drawn and printed when omitted)")
    common.add_argument("--threads", type=int, default=0, help="worker threads (0 = one per CPU)")
    common.add_argument("--output-dir", help="report directory (default: $FMD_OUTPUT_DIR or results)")

    dataset = argparse.ArgumentParser(add_help=False)
    dataset.add_argument("--rates", type=_int_list, default=list(range(1, 8)),
                         help="dyadic exponents l of the rate set, e.g. 1..7")
    dataset.add_argument("--fold", type=int, default=0)

    ingest = commands.add_parser("ingest", parents=[common, dataset], help="load a dataset and dump degrees")
    ingest.add_argument("--dataset", required=True)
    ingest.add_argument("--save-edges", help="write the normalized edge list here")
    ingest.set_defaults(handler=cmd_ingest)

    sim = commands.add_parser("simulate", parents=[common, dataset], help="simulate fuzzy downloads")
    sim.add_argument("--dataset", required=True)
    sim.add_argument("--backend", choices=BACKENDS, default="aggregated")
    sim.add_argument("--epoch-size", type=int, default=25000)
    sim.add_argument("--epoch-mode", choices=EPOCH_MODES, default="contiguous")
    sim.add_argument("--profile-user", type=int, help="original user id to profile over epochs")
    sim.add_argument("--profile-exponents", type=_int_list, default=[1, 3, 5, 7])
    sim.set_defaults(handler=cmd_simulate)

    rep = commands.add_parser("reproduce", parents=[common], help="run the full attack evaluation")
    rep.add_argument("--dataset")
    rep.add_argument("--rates", type=_int_list)
    rep.add_argument("--folds", type=int)
    rep.add_argument("--alpha", type=float)
    rep.add_argument("--epoch-size", type=int)
    rep.add_argument("--epoch-mode", choices=EPOCH_MODES)
    rep.add_argument("--backend", choices=BACKENDS, help="relationship-scan backend")
    rep.add_argument("--unordered", action="store_true", help="also score unordered pairs")
    rep.set_defaults(handler=cmd_reproduce, threads=None)

    calc = commands.add_parser("calc", help="closed-form calculators")
    calculators = calc.add_subparsers(dest="calculator", required=True)
    calc_common = argparse.ArgumentParser(add_help=False)
    calc_common.add_argument("--output", help="write the result to this file instead of stdout")
    calc_common.add_argument("--seed", type=int)
    calc_common.add_argument("--threads", type=int, default=1)
    calc_common.add_argument("--alpha", type=float, default=attacks_stat.DEFAULT_ALPHA)

    c = calculators.add_parser("ru", parents=[calc_common], help="recipient-unlinkability advantage")
    c.add_argument("--U", type=int)
    c.add_argument("--p", type=_rate)
    c.add_argument("--exact", action="store_true", help="exact subset sum (U <= 22)")
    c.add_argument("--trials", type=int, default=0, help="also play the game this many times")
    c.add_argument("--heatmap", action="store_true", help="emit the U x p grid as CSV")
    c.add_argument("--max-users", type=int, default=10 ** 6)
    c.add_argument("--points", type=int, default=25)

    c = calculators.add_parser("intersection", parents=[calc_common], help="intersection-attack residual set")
    c.add_argument("--U", type=int, required=True)
    c.add_argument("--p", type=_rate, required=True)
    c.add_argument("--l", type=int, required=True)
    c.add_argument("--trials", type=int, default=0)

    c = calculators.add_parser("sybil", parents=[calc_common], help="Sybil pinpointing probability")
    c.add_argument("--U", type=int, required=True)
    c.add_argument("--K", type=int, required=True)
    c.add_argument("--N", type=int, required=True)

    c = calculators.add_parser("peedp", parents=[calc_common], help="edge-privacy epsilon ln(1/p)")
    c.add_argument("--p", type=_rate, required=True)

    c = calculators.add_parser("incoming-dp", parents=[calc_common], help="(epsilon, delta) of in(u)")
    c.add_argument("--M", type=int)
    c.add_argument("--in", dest="in_count", type=int)
    c.add_argument("--p", type=_rate)
    c.add_argument("--table", action="store_true", help="the eight exemplary settings")
    c.add_argument("--replay", action="store_true", help="verify numerically by enumeration")

    c = calculators.add_parser("min-expose", parents=[calc_common], help="messages needed to expose a pair")
    c.add_argument("--out", type=int)
    c.add_argument("--p", type=_rate)
    c.add_argument("--outs", type=_int_list, help="sweep over out(v)")
    c.add_argument("--exponents", type=_int_list, default=list(range(1, 8)))

    c = calculators.add_parser("min-rate", parents=[calc_common], help="rate needed against the TDA test")
    c.add_argument("--epoch-messages", type=int)
    c.add_argument("--in", dest="in_count", type=int)
    c.add_argument("--epoch-messages-list", type=_int_list, help="sweep over epoch sizes")
    c.add_argument("--in-values", type=_int_list, default=[1, 10, 50, 100])

    calc.set_defaults(handler=cmd_calc)

    game = commands.add_parser("game", help="the rate-selection game")
    game.add_argument("routine", choices=sorted(GAME_ROUTINES))
    game.add_argument("--game-config", help="flat JSON game file (f, L, M, in_counts | dataset)")
    game.add_argument("--dataset", help="take in-degrees from this edge list")
    game.add_argument("--f", type=float, default=1.0, help="download cost per message")
    game.add_argument("--L", type=float, help="privacy loss (default 10 f M)")
    game.add_argument("--seed", type=int)
    game.add_argument("--grid", type=int, default=game_theory.DEFAULT_GRID)
    game.add_argument("--max-iters", type=int, default=100)
    game.add_argument("--samples", type=int, default=1000)
    game.add_argument("--rate", type=_rate, help="start from (or check) the uniform profile")
    game.add_argument("--profile", help="comma-separated rates to start from or check")
    game.add_argument("--full", action="store_true", help="include every rate in the report")
    game.add_argument("--output")
    game.set_defaults(handler=cmd_game)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main application function"""
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.verbose - args.quiet)
    try:
        cfg = Config(args.config)
        return args.handler(args, cfg)
    except (ConfigError, ArgumentError) as e:
        parser.print_usage(sys.stderr)
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_USAGE
    except (FmdError, OSError) as e:
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        print("❌ Interrupted", file=sys.stderr)
        sys.exit(130)
