import argparse
import logging
import sys
import time
from typing import Any, Dict, List, NoReturn, Optional

import pandas as pd
from dotenv import load_dotenv

from handlers.pipeline import Pipeline, compare
from services.metrics import render
from utils.exceptions import EXIT_CODES, BaseCustomException, ErrorCode
from utils.logger import Logger
from utils.run_config import RunConfig


class ArgumentParser(argparse.ArgumentParser):
    """Usage errors exit with the configuration-error status."""

    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(EXIT_CODES[ErrorCode.CONFIGURATION_ERROR], f"{self.prog}: error: {message}\n")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="YAML run configuration; flags override its values")
    parser.add_argument("--save-config", help="write the effective configuration to this YAML file")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    parser.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")

    asset = parser.add_argument_group("storage asset")
    asset.add_argument("--power", type=float, help="power rating in MW (default 0.5)")
    asset.add_argument("--energy", type=float, help="energy capacity in MWh (default 1.0)")
    asset.add_argument("--eta", type=float, help="one-way efficiency for both directions (default 0.9)")
    asset.add_argument("--eta-charge", type=float, help="charging efficiency, overrides --eta")
    asset.add_argument("--eta-discharge", type=float, help="discharging efficiency, overrides --eta")
    asset.add_argument("--marginal-cost", type=float, help="discharge cost in $/MWh (default 10)")
    asset.add_argument("--period-minutes", type=int, help="real-time period length (default 5)")
    asset.add_argument("--e0", type=float, help="initial state of charge in MWh (default 0)")

    schema = parser.add_argument_group("price files")
    schema.add_argument("--rtp", help="real-time price CSV")
    schema.add_argument("--dap", help="day-ahead price CSV")
    schema.add_argument("--timestamp-column", help="timestamp column name (default 'timestamp')")
    schema.add_argument("--price-column", help="price column name (default 'price')")
    schema.add_argument("--zone-column", help="column holding the zone name, for multi-zone files")
    schema.add_argument("--zone", help="zone to keep and to label reports with")
    schema.add_argument("--timestamp-format", help="strptime format of the timestamp column")
    schema.add_argument("--start", help="first timestamp to keep, inclusive")
    schema.add_argument("--end", help="last timestamp to keep, exclusive")


def build_parser() -> argparse.ArgumentParser:
    parser = ArgumentParser(prog="vf-arbitrage",
                            description="Storage arbitrage with hindsight value functions and a learned predictor.")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=ArgumentParser)

    gen = commands.add_parser("gen-values", help="compute hindsight value functions from real-time prices")
    _add_common(gen)
    gen.add_argument("--out", required=True, help="value-function archive (.npz) to write")
    gen.add_argument("--grid-segments", type=int, help="SoC segments of the recursion (default 1001)")
    gen.add_argument("--segments", type=int, help="store curves down-sampled to this many segments")

    train = commands.add_parser("train", help="train value-function predictors and keep the best seed")
    _add_common(train)
    train.add_argument("--values", help="value archive of the training prices; generated when omitted")
    train.add_argument("--out", required=True, help="model file to write")
    train.add_argument("--setting", type=int, choices=[1, 2, 3, 4], help="feature and layer setting (default 3)")
    train.add_argument("--seeds", type=int, help="number of seeds 0..n-1 to train (default 10)")
    train.add_argument("--batch-size", type=int, help="mini-batch size (default 512)")
    train.add_argument("--learning-rate", type=float, help="Adam step size (default 0.001)")
    train.add_argument("--workers", type=int, help="train seeds in this many processes (default 1)")
    train.add_argument("--no-normalize", action="store_true", help="skip z-scoring of features and labels")
    train.add_argument("--grid-segments", type=int, help="SoC segments used when generating labels")
    train.add_argument("--seed-log", help="per-seed summary CSV (default <out>.seeds.csv)")
    train.add_argument("--epoch-log", help="per-epoch loss CSV (default <out>.epochs.csv)")
    train.add_argument("--test-rtp", help="real-time prices for the per-seed test backtest (default --rtp)")
    train.add_argument("--test-dap", help="day-ahead prices for the per-seed test backtest (default --dap)")
    train.add_argument("--test-start", help="first timestamp of the per-seed test backtest, inclusive")
    train.add_argument("--test-end", help="last timestamp of the per-seed test backtest, exclusive")

    backtest = commands.add_parser("backtest", help="dispatch against predicted or hindsight curves")
    _add_common(backtest)
    source = backtest.add_mutually_exclusive_group()
    source.add_argument("--model", help="trained model file")
    source.add_argument("--myopic", action="store_true", help="dispatch against a zero curve")
    backtest.add_argument("--hindsight", help="value archive of the test prices; without --model it is dispatched")
    backtest.add_argument("--out", required=True, help="metrics report CSV to write")
    backtest.add_argument("--dispatch-log", help="dispatch log CSV (default <out>.dispatch.csv)")
    backtest.add_argument("--grid-segments", type=int, help="SoC segments for the perfect-foresight profit")

    comp = commands.add_parser("compare", help="merge metric reports into one table")
    comp.add_argument("--reports", nargs="+", required=True, help="report CSVs; later files win on duplicates")
    comp.add_argument("--out", help="merged CSV to write")
    comp.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    comp.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")

    synth = commands.add_parser("synth", help="write synthetic real-time and day-ahead prices")
    _add_common(synth)
    synth.add_argument("--out", required=True, help="real-time CSV to write")
    synth.add_argument("--dap-out", help="day-ahead CSV to write (default <out>.dap.csv)")
    synth.add_argument("--days", type=int, required=True, help="number of days")
    synth.add_argument("--seed", type=int, help="random seed (default 0)")
    synth.add_argument("--first-day", default="2019-01-01", help="first operating day")
    return parser


def _opt(args: argparse.Namespace, name: str) -> Any:
    return getattr(args, name, None)


def build_config(args: argparse.Namespace) -> RunConfig:
    """Base config from --config (or defaults) with every given flag applied on top."""
    base = RunConfig.load(args.config) if _opt(args, "config") else RunConfig()
    eta = _opt(args, "eta")
    minutes = _opt(args, "period_minutes")
    storage: Dict[str, Any] = {
        "power_rating": _opt(args, "power"),
        "energy_capacity": _opt(args, "energy"),
        "eta_charge": _opt(args, "eta_charge") if _opt(args, "eta_charge") is not None else eta,
        "eta_discharge": _opt(args, "eta_discharge") if _opt(args, "eta_discharge") is not None else eta,
        "marginal_cost": _opt(args, "marginal_cost"),
        "period_hours": None if minutes is None else minutes / 60.0,
    }
    schema = {
        "timestamp_column": _opt(args, "timestamp_column"),
        "price_column": _opt(args, "price_column"),
        "zone_column": _opt(args, "zone_column"),
        "zone": _opt(args, "zone") if _opt(args, "zone_column") else None,
        "timestamp_format": _opt(args, "timestamp_format"),
        "start": _opt(args, "start"),
        "end": _opt(args, "end"),
        "period_minutes": minutes,
    }
    train = {
        "setting": _opt(args, "setting"),
        "n_seeds": _opt(args, "seeds"),
        "batch_size": _opt(args, "batch_size"),
        "learning_rate": _opt(args, "learning_rate"),
        "max_workers": _opt(args, "workers"),
        "normalize": False if _opt(args, "no_normalize") else None,
    }
    paths = {key: _opt(args, key) for key in ("rtp", "dap", "values", "model", "hindsight", "out",
                                              "dispatch_log", "seed_log", "epoch_log", "dap_out",
                                              "test_rtp", "test_dap")}
    config = base.with_overrides(storage=storage, train=train, schema=schema, paths=paths,
                                 e_0=_opt(args, "e0"), segments=_opt(args, "grid_segments"),
                                 store_segments=_opt(args, "segments"), seed=_opt(args, "seed"),
                                 zone=_opt(args, "zone"), test_start=_opt(args, "test_start"),
                                 test_end=_opt(args, "test_end"))
    if config.train.e_0 != config.e_0:
        config = config.with_overrides(train={"e_0": config.e_0})
    return config


def _configure_logging(args: argparse.Namespace) -> None:
    if args.verbose:
        Logger.set_global_level(logging.DEBUG)
    elif args.quiet:
        Logger.set_global_level(logging.WARNING)
    else:
        Logger.set_global_level(None)


def run(args: argparse.Namespace) -> None:
    if args.command == "compare":
        table = compare(args.reports, args.out)
        with pd.option_context("display.width", 200, "display.max_columns", None):
            print(table.to_string())
        return

    config = build_config(args)
    if args.save_config:
        config.save(args.save_config)
    pipeline = Pipeline(config)
    if args.command == "gen-values":
        series = pipeline.gen_values()
        print(f"wrote {len(series)} curves of {series.num_segments} segments to {args.out}")
    elif args.command == "train":
        result = pipeline.train()
        print(result.seed_log.to_string(index=False))
        print(f"selected seed {result.best.seed} with training profit {result.best.training_profit:.2f}")
    elif args.command == "backtest":
        outcome = pipeline.backtest(myopic=args.myopic)
        print(render(outcome.report.to_frame()))
    elif args.command == "synth":
        series = pipeline.synth(args.days, args.first_day)
        print(f"wrote {len(series)} periods to {args.out}")


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    logger = Logger.get_instance("Cli")
    _configure_logging(args)
    started = time.perf_counter()
    try:
        run(args)
    except BaseCustomException as exc:
        logger.error(exc.message, extra={"fields": exc.to_dict()})
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except KeyboardInterrupt:
        logger.warning("Interrupted by user")
        return 130
    print(f"wall time {time.perf_counter() - started:.2f} s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
