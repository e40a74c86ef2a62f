import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from backend.adversarial import AdjusterModel, GanHistory
from backend.backtest import BREAK_EVEN, AdjustedStrategy, backtest, build_baseline, fit_adjuster
from backend.config import RunConfig, load_config, log_level
from backend.errors import FdesqError, InputError
from backend.event_library import EventLibrary
from backend.experiments import GradientFn, gradient_oracle_suite
from backend.export_report import emit_report
from backend.market_data import PriceSeries, RollingWindowSample, Scaler, rolling_windows, write_samples_csv
from backend.pair_screen import load_universe, write_pairs_csv
from backend.seeding import derive_seed
from backend.serialization import load_adjuster, save_adjuster
from backend.synthetic import (
    event_market,
    fdes_price_series,
    gbm_series,
    simulate_gbm_paths,
    write_gbm_shocks,
    write_ground_truth,
    write_series_csvs,
)
from backend.utils import load_universe_file

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2

TRUTH_DIR = "truth"


def setup_logging(out_dir: Path) -> None:
    """Console plus `fdesq.log` in the output directory; level from FDESQ_LOG."""
    handlers: List[logging.Handler] = [logging.StreamHandler()]
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        handlers.insert(0, logging.FileHandler(out_dir / "fdesq.log", encoding="utf-8"))
    except OSError as e:
        print(f"⚠️ Cannot open log file in {out_dir}: {e}", file=sys.stderr)
    logging.basicConfig(
        level=log_level(),
        format="%(asctime)s - %(levelname)s - %(message)s",
        handlers=handlers,
        force=True,
    )


# -- shared steps ---------------------------------------------------------------

def load_ticker_universe(config: RunConfig) -> Dict[str, PriceSeries]:
    tickers = load_universe_file(config.screen.universe) if config.screen.universe else None
    universe = load_universe(config.data_dir, tickers)
    if not universe:
        raise InputError(f"No ticker CSV files found in {config.data_dir}")
    logger.info(f"Loaded {len(universe)} tickers from {config.data_dir}")
    return universe


def training_samples(config: RunConfig, series: PriceSeries) -> Tuple[List[RollingWindowSample], Scaler]:
    """Samples of the leading training segment, normalized with that segment's scaler."""
    segment = series.closes[:config.backtest.train_days]
    scaler = Scaler.fit(segment)
    w = config.window
    try:
        samples = rolling_windows(scaler.transform(segment), w.size, w.horizon, w.decay, w.decay_rate)
    except InputError as e:
        raise InputError(f"{series.ticker}: {e}") from e
    return samples, scaler


def train_adjuster(config: RunConfig, series: PriceSeries) -> Tuple[AdjusterModel, GanHistory]:
    samples, scaler = training_samples(config, series)
    return fit_adjuster(samples, config.gan_config(), scaler, config.pretrain_config())


# -- commands -------------------------------------------------------------------

def cmd_gradcheck(config: RunConfig, gradient_fn: Optional[GradientFn] = None) -> int:
    g = config.gradcheck
    report = gradient_oracle_suite(g.instances, g.step, g.tolerance, config.seed, g.train_sharpness, gradient_fn)
    for case in report.cases:
        flag = "" if case.error < g.tolerance else "  FAILED"
        print(
            f"instance {case.index:3d}: N={case.dimension} L={case.depth} delta={case.sharpness:g} "
            f"max relative error {case.error:.3e}{flag}"
        )
    print(f"max relative error {report.max_error:.3e} (tolerance {g.tolerance:g})")
    if not report.passed:
        logger.error(f"❌ Gradient check failed on {len(report.failures)} of {len(report.cases)} instances")
        return EXIT_CHECK_FAILED
    logger.info(f"✅ Gradient check passed on {len(report.cases)} instances")
    return EXIT_OK


def cmd_ingest(config: RunConfig) -> int:
    universe = load_ticker_universe(config)
    for ticker, series in sorted(universe.items()):
        samples, scaler = training_samples(config, series)
        path = config.out_dir / f"samples_{ticker}.csv"
        config.out_dir.mkdir(parents=True, exist_ok=True)
        write_samples_csv(samples, path)
        logger.info(f"{ticker}: {len(series)} closes, scaler ({scaler.minimum:g}, {scaler.maximum:g}), "
                    f"{len(samples)} samples -> {path}")
    print(f"ingested {len(universe)} tickers into {config.out_dir}")
    return EXIT_OK


def cmd_screen(config: RunConfig) -> int:
    universe = load_ticker_universe(config)
    screener = config.screener()
    results = screener.screen(universe)
    path = write_pairs_csv(results, config.out_dir / "pairs.csv")
    selected = sum(r.selected for r in results)
    print(
        f"{selected} of {len(results)} pairs selected "
        f"(|r| > {screener.threshold:g}, p < {screener.alpha:g}); {len(screener.skipped)} skipped -> {path}"
    )
    return EXIT_OK


def cmd_simulate(config: RunConfig) -> int:
    """Write synthetic `<TICKER>.csv` series into the data directory, ground truth under `truth/`."""
    s = config.simulate
    data_dir = config.data_dir
    truth_dir = data_dir / TRUTH_DIR

    if s.kind == "gbm":
        paths = simulate_gbm_paths(config.gbm_params(), config.screen.workers)
        series = gbm_series(paths)
        write_gbm_shocks(paths, truth_dir)
    elif s.kind == "event":
        series = []
        for index in range(s.paths):
            ticker = f"EVT{index:03d}"
            market = event_market(config.event_market_params(derive_seed(config.seed, "event", index)), ticker)
            write_ground_truth(market.truth, truth_dir, ticker)
            series.append(market.series)
    else:
        series = []
        for index in range(s.paths):
            ticker = f"FDES{index:03d}"
            prices, truth = fdes_price_series(
                config.fdes.dimension,
                s.steps + 1,
                s.event_rate,
                derive_seed(config.seed, "fdes", index),
                s.s0,
                ticker,
            )
            write_ground_truth(truth, truth_dir, ticker)
            series.append(prices)

    written = write_series_csvs(series, data_dir)
    print(f"simulated {len(written)} {s.kind} series of {s.steps} steps into {data_dir}")
    return EXIT_OK


def cmd_train(config: RunConfig) -> int:
    universe = load_ticker_universe(config)
    library = EventLibrary(config.gan.library_dir) if config.gan.library_dir else None
    for ticker, series in sorted(universe.items()):
        model, history = train_adjuster(config, series)
        model_path = save_adjuster(model, config.out_dir / f"adjuster_{ticker}.fdes")
        history.write_csv(config.out_dir / f"gan_history_{ticker}.csv")
        if library is not None:
            for layer in model.generator.layers:
                library.store(layer, f"{ticker}_{layer.label}")
        last = history.rounds[-1]
        print(f"{ticker}: adjuster -> {model_path} (d_loss {last.d_loss:.4f}, g_loss {last.g_loss:.4f})")
    return EXIT_OK


def cmd_backtest(config: RunConfig) -> int:
    universe = load_ticker_universe(config)
    split = config.backtest_config()
    echo = config.echo()
    for ticker, series in sorted(universe.items()):
        model_path = config.out_dir / f"adjuster_{ticker}.fdes"
        if model_path.is_file():
            model = load_adjuster(model_path)
        else:
            logger.info(f"No adjuster at {model_path}; training one on the first {split.train_days} days")
            model, _ = train_adjuster(config, series)

        baseline = build_baseline(config.backtest.baseline, config.backtest.ridge)
        adjusted = AdjustedStrategy(build_baseline(config.backtest.baseline, config.backtest.ridge), adjuster=model)
        report = backtest(series, [baseline, adjusted], split, echo)
        emit_report(report, config.out_dir, docx=config.run.docx)

        for name, metrics in report.metrics.items():
            print(
                f"{ticker} {name}: directional accuracy {metrics.directional_accuracy:.3f} "
                f"RMSE {metrics.rmse:.6g} over {metrics.count} days"
            )
        print(f"{ticker}: break-even directional accuracy is {BREAK_EVEN:.2f}")
    return EXIT_OK


COMMANDS = {
    "gradcheck": cmd_gradcheck,
    "ingest": cmd_ingest,
    "screen": cmd_screen,
    "simulate": cmd_simulate,
    "train": cmd_train,
    "backtest": cmd_backtest,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Path to an INI run configuration")
    common.add_argument("--seed", type=int, help="Root seed (overrides [run] seed)")
    common.add_argument("--out", dest="out_dir", help="Output directory (overrides [run] out_dir)")
    common.add_argument("--data", dest="data_dir", help="Data directory (overrides [run] data_dir)")
    common.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="Override one configuration key; repeatable",
    )

    parser = argparse.ArgumentParser(
        prog="fdesq",
        description="FDES backpropagation, pair screening and event-adjusted backtesting",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("gradcheck", parents=[common], help="Check analytic gradients against finite differences")
    commands.add_parser("ingest", parents=[common], help="Validate ticker CSVs and write rolling-window samples")
    commands.add_parser("screen", parents=[common], help="Screen all ticker pairs by permutation test")
    commands.add_parser("simulate", parents=[common], help="Write synthetic series with ground truth")
    commands.add_parser("train", parents=[common], help="Train an event adjuster per ticker")
    commands.add_parser("backtest", parents=[common], help="Walk-forward baseline vs adjusted backtest")
    return parser


def main(argv: Optional[List[str]] = None, gradient_fn: Optional[GradientFn] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config, args.overrides, args.seed, args.out_dir, args.data_dir)
    except FdesqError as e:
        print(f"❌ Configuration error: {e}", file=sys.stderr)
        return EXIT_USAGE

    setup_logging(config.out_dir)
    logger.info(f"fdesq {args.command} (seed {config.seed}, data {config.data_dir}, out {config.out_dir})")
    try:
        if args.command == "gradcheck":
            return cmd_gradcheck(config, gradient_fn)
        return COMMANDS[args.command](config)
    except FdesqError as e:
        logger.error(f"❌ {args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        logger.error(f"❌ {args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
