"""Scenario runner, parameter sweeps, and on-chain cost reporting.

The cost model compares a simulated exchange against an oracle service that
delivers data points through individual contract calls: a Price Feed call
costs 216,844 gas and a generic API call 1,470,295 gas, each delivering one
datum by default. The simulator side is the exact sum of its metered gas log.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import math
import os
from dataclasses import dataclass
from multiprocessing import Pool

from .config import ConfigError, ScenarioConfig, format_config, load_config
from .ledger import MODEL_ESTIMATED_FUNCTIONS
from .netsim import InvariantViolation, ScriptError, Trace, parse_trace_header, run_scenario

CHAINLINK_PRICE_FEED_GAS = 216_844
CHAINLINK_API_CALL_GAS = 1_470_295

# reference snapshot used for the optional USD column (May 2024 prices)
REFERENCE_GAS_PRICE_GWEI = 10.96
REFERENCE_ETH_USD = 3_510.0

EXIT_OK = 0
EXIT_CONFIG_ERROR = 2
EXIT_INVARIANT_VIOLATION = 3


def gas_to_usd(gas: int) -> float:
    return gas * REFERENCE_GAS_PRICE_GWEI * 1e-9 * REFERENCE_ETH_USD


@dataclass(frozen=True)
class CostRow:
    label: str
    n_nodes: int
    threshold: int
    max_faulty: int
    providers: int
    datum_size: int
    data_bytes: int
    total_gas_dexo: int
    total_calls: int
    exchange_calls: int
    sessions: int
    gas_chainlink_pricefeed: int = 0
    gas_chainlink_apicall: int = 0


REPORT_COLUMNS = [f.name for f in dataclasses.fields(CostRow)]


@dataclass
class CostReport:
    rows: list[CostRow]
    datums_per_call: int = 1

    def to_csv(self, usd: bool = False) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        header = list(REPORT_COLUMNS)
        if usd:
            header += ["usd_dexo", "usd_pricefeed"]
        writer.writerow(header)
        for row in self.rows:
            values = [getattr(row, c) for c in REPORT_COLUMNS]
            if usd:
                values += [
                    f"{gas_to_usd(row.total_gas_dexo):.2f}",
                    f"{gas_to_usd(row.gas_chainlink_pricefeed):.2f}",
                ]
            writer.writerow(values)
        return out.getvalue()

    @staticmethod
    def from_csv(text: str) -> "CostReport":
        reader = csv.DictReader(io.StringIO(text))
        rows = []
        for record in reader:
            rows.append(
                CostRow(
                    **{
                        c: (record[c] if c == "label" else int(record[c]))
                        for c in REPORT_COLUMNS
                    }
                )
            )
        return CostReport(rows=rows)


def _row_from_trace(label: str, trace: Trace) -> CostRow:
    config = trace.config
    return CostRow(
        label=label,
        n_nodes=config.n_nodes,
        threshold=config.threshold,
        max_faulty=config.max_faulty,
        providers=config.providers,
        datum_size=config.datum_size_bytes,
        data_bytes=config.providers * config.datum_size_bytes,
        total_gas_dexo=trace.outcome.gas_total,
        total_calls=trace.outcome.total_calls,
        exchange_calls=trace.outcome.exchange_calls,
        sessions=trace.outcome.paid_sessions,
    )


def _run_row(args: tuple[str, ScenarioConfig]) -> CostRow:
    label, config = args
    return _row_from_trace(label, run_scenario(config))


def build_cost_report(
    labeled_configs: list[tuple[str, ScenarioConfig]],
    parallel: bool = False,
    datums_per_call: int = 1,
) -> CostReport:
    """Run every config and collect one report row each. Runs are independent
    and deterministic, so they may execute in parallel.
    """
    if parallel and len(labeled_configs) > 1:
        # one task per run: costs vary widely with N, so fine-grained
        # scheduling avoids a straggler worker
        with Pool(min(os.cpu_count() or 1, len(labeled_configs))) as pool:
            rows = pool.map(_run_row, labeled_configs, chunksize=1)
    else:
        rows = [_run_row(lc) for lc in labeled_configs]
    return compare_chainlink(CostReport(rows=rows, datums_per_call=datums_per_call))


def compare_chainlink(report: CostReport) -> CostReport:
    """Fill in what delivering the same data volume costs per-call on-chain."""
    rows = []
    for row in report.rows:
        if row.data_bytes == 0 or row.datum_size == 0:
            calls = 0
        else:
            bytes_per_call = report.datums_per_call * row.datum_size
            calls = math.ceil(row.data_bytes / bytes_per_call)
        rows.append(
            dataclasses.replace(
                row,
                gas_chainlink_pricefeed=calls * CHAINLINK_PRICE_FEED_GAS,
                gas_chainlink_apicall=calls * CHAINLINK_API_CALL_GAS,
            )
        )
    return CostReport(rows=rows, datums_per_call=report.datums_per_call)


def crossover_lines(report: CostReport) -> list[str]:
    lines = []
    cheaper = False
    for row in report.rows:
        now_cheaper = row.total_gas_dexo < row.gas_chainlink_pricefeed
        if now_cheaper and not cheaper:
            lines.append(
                f"{row.label}: cheaper than the per-call price feed from here on"
                f" ({row.total_gas_dexo} < {row.gas_chainlink_pricefeed})"
            )
        cheaper = now_cheaper
    return lines


# ---------------------------------------------------------------- sweeps

SWEEP_AXES = (
    "providers",
    "n_nodes",
    "threshold",
    "max_faulty",
    "datum_size_bytes",
    "seed",
    "timeout_blocks",
)


def derive_configs(
    base: ScenarioConfig, axis: str, values: list[int]
) -> list[tuple[str, ScenarioConfig]]:
    if axis not in SWEEP_AXES:
        raise ConfigError(f"cannot sweep axis {axis!r}; choose from {SWEEP_AXES}")
    derived = []
    for value in values:
        config = dataclasses.replace(base, **{axis: value})
        config.validate()
        derived.append((f"{axis}={value}", config))
    return derived


def sweep(
    base: ScenarioConfig, axis: str, values: list[int], parallel: bool = False
) -> CostReport:
    return build_cost_report(derive_configs(base, axis, values), parallel=parallel)


def valid_fault_bound(n: int, t: int) -> int:
    """Largest F compatible with F < t <= N-F and F < N/2."""
    return min(t - 1, n - t, (n - 1) // 2)


def family_configs(
    n_values: list[int],
    threshold_rule: str,
    providers: int,
    datum_size: int,
    seed: int = 0,
) -> list[tuple[str, ScenarioConfig]]:
    """One honest config per node count under a threshold rule ('half' means
    t = ceil(N/2), 'two_thirds' means t = ceil(2N/3)).
    """
    configs = []
    for n in n_values:
        t = math.ceil(n / 2) if threshold_rule == "half" else math.ceil(2 * n / 3)
        f = valid_fault_bound(n, t)
        config = ScenarioConfig(
            n_nodes=n,
            threshold=t,
            max_faulty=f,
            providers=providers,
            datum_size_bytes=datum_size,
            value_min=0,
            value_max=255,
            seed=seed,
        )
        config.validate()
        configs.append((f"n={n},rule={threshold_rule}", config))
    return configs


# ---------------------------------------------------------------- run verb


def summarize(trace: Trace) -> str:
    o = trace.outcome
    config = trace.config
    lines = [
        f"scenario: N={config.n_nodes} t={config.threshold} F={config.max_faulty} "
        f"M={config.providers} adversary={config.adversary} seed={config.seed}",
        f"outcome: {o.finished_reason} (reconstruction_valid={o.reconstruction_valid})",
        f"exchange calls: {o.exchange_calls} "
        f"(3N+3t+2 = {3 * config.n_nodes + 3 * config.threshold + 2} for the honest merged run)",
        f"total calls: {o.total_calls}",
        f"paid sessions: {o.paid_sessions}",
        f"total gas: {o.gas_total} "
        f"(gas for {sorted(MODEL_ESTIMATED_FUNCTIONS)} is model-estimated)",
        f"refund to buyer: {o.refund_to_buyer}",
        f"settled sessions: {list(o.settled_sessions)}",
        f"refunded sessions: {list(o.refunded_sessions)}",
    ]
    for d in o.disputes:
        lines.append(f"dispute: {d}")
    for a in o.anomalies:
        lines.append(f"anomaly: {a}")
    if o.coalition_max:
        lines.append(f"coalition shares per provider: {o.coalition_max}")
    return "\n".join(lines) + "\n"


def run(config_path: str, out_dir: str = "out", usd: bool = False) -> int:
    """Execute one scenario; write trace, gas CSV, and summary files."""
    try:
        config = load_config(config_path)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}")
        return EXIT_CONFIG_ERROR
    try:
        trace = run_scenario(config)
    except ScriptError as exc:
        print(f"config error: {exc}")
        return EXIT_CONFIG_ERROR
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}")
        return EXIT_INVARIANT_VIOLATION
    os.makedirs(out_dir, exist_ok=True)
    stem = os.path.splitext(os.path.basename(config_path))[0]
    with open(os.path.join(out_dir, f"{stem}.trace"), "w") as fh:
        fh.write(trace.serialize())
    with open(os.path.join(out_dir, f"{stem}.gas.csv"), "w") as fh:
        fh.write(trace.gas_csv)
    summary = summarize(trace)
    if usd:
        summary += (
            f"total gas in USD: {gas_to_usd(trace.outcome.gas_total):.2f} "
            f"(reference snapshot: {REFERENCE_GAS_PRICE_GWEI} gwei, "
            f"ETH ${REFERENCE_ETH_USD:,.0f})\n"
        )
    with open(os.path.join(out_dir, f"{stem}.summary.txt"), "w") as fh:
        fh.write(summary)
    print(summary, end="")
    return EXIT_OK


def run_sweep(
    config_path: str,
    axis: str,
    values: list[int],
    out_path: str,
    parallel: bool = False,
    usd: bool = False,
) -> int:
    try:
        base = load_config(config_path)
        report = sweep(base, axis, values, parallel=parallel)
    except (ConfigError, ScriptError, OSError) as exc:
        print(f"config error: {exc}")
        return EXIT_CONFIG_ERROR
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}")
        return EXIT_INVARIANT_VIOLATION
    text = report.to_csv(usd=usd)
    os.makedirs(os.path.dirname(out_path) or ".", exist_ok=True)
    with open(out_path, "w") as fh:
        fh.write(text)
    print(text, end="")
    for line in crossover_lines(report):
        print(line)
    return EXIT_OK


def run_compare(report_path: str, out_path: str | None = None, usd: bool = False) -> int:
    try:
        with open(report_path) as fh:
            report = CostReport.from_csv(fh.read())
    except (OSError, KeyError, ValueError) as exc:
        print(f"config error: cannot read report: {exc}")
        return EXIT_CONFIG_ERROR
    report = compare_chainlink(report)
    text = report.to_csv(usd=usd)
    if out_path:
        with open(out_path, "w") as fh:
            fh.write(text)
    print(text, end="")
    for line in crossover_lines(report):
        print(line)
    return EXIT_OK


def run_replay(trace_path: str) -> int:
    try:
        with open(trace_path) as fh:
            text = fh.read()
        config, script = parse_trace_header(text)
    except (OSError, ValueError, ConfigError) as exc:
        print(f"config error: cannot read trace: {exc}")
        return EXIT_CONFIG_ERROR
    fresh = run_scenario(config, script)
    if fresh.serialize() == text:
        print("replay: identical")
        return EXIT_OK
    print("replay: MISMATCH")
    return EXIT_INVARIANT_VIOLATION


def write_example_config(path: str) -> None:
    config = ScenarioConfig(n_nodes=5, threshold=3, max_faulty=2, providers=2)
    with open(path, "w") as fh:
        fh.write(format_config(config))
