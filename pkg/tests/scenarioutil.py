"""Shared helpers for whole-protocol scenario tests."""

from __future__ import annotations

from dexo.config import ScenarioConfig
from dexo.netsim import Trace


def suite_config(**overrides) -> ScenarioConfig:
    """The adversarial-suite configuration: a tight description range so
    garbage reconstructions are detectable, and honest data well inside it.
    """
    params = dict(
        n_nodes=7,
        threshold=4,
        max_faulty=3,
        providers=3,
        datum_size_bytes=8,
        value_min=0,
        value_max=100,
        timeout_blocks=10,
        seed=0,
    )
    params.update(overrides)
    return ScenarioConfig(**params)


def assert_fair_exchange(trace: Trace) -> None:
    """Terminal-state fairness: providers are paid iff the buyer ended up with
    data meeting the advertised description, escrow never lingers, and
    refunds cover every failed portion. (Bit-exact recovery of the device
    output is asserted separately where a script's outcome mandates it.)
    """
    from dexo.ledger import DataDescription, conforms_to_description

    o = trace.outcome
    cfg = trace.config
    assert o.escrow_left == 0, f"escrow left behind: {o.escrow_left}"
    if not o.reconstruction_valid:
        assert o.paid_out == 0, (
            f"providers received {o.paid_out} although the buyer has no valid data "
            f"({cfg.adversary}, seed {cfg.seed})"
        )
    else:
        assert o.paid_out > 0, "buyer obtained data yet nobody was paid"
        desc = DataDescription(
            datum_size=cfg.datum_size_bytes, value_min=cfg.value_min,
            value_max=cfg.value_max, providers=cfg.providers,
            n_nodes=cfg.n_nodes, threshold=cfg.threshold,
            timeout_blocks=cfg.timeout_blocks,
        )
        for provider in range(1, cfg.providers + 1):
            datum = o.reconstructed.get(provider)
            assert datum is not None and conforms_to_description(datum, desc), (
                f"provider {provider}: settled without description-conformant data"
            )


def assert_conserved(trace: Trace) -> None:
    # funding equals the consumer's starting balance, and escrow is empty at
    # the end, so everything in circulation must sum back to the mint
    o = trace.outcome
    total = o.paid_out + o.refund_to_buyer + (
        trace.config.resolved_price()
        - o.paid_sessions * (trace.config.resolved_price() // trace.config.n_nodes)
    )
    assert total == trace.config.resolved_price(), (
        f"currency leak: {total} != {trace.config.resolved_price()}"
    )
