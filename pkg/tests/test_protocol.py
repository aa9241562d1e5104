import inspect
import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ldp_erm.errors import ContractViolationError, InputDomainError, ResourceError
from ldp_erm.losses import LossSpec, get_loss, synthetic_dataset
from ldp_erm.protocol import (PublicContext, ProtocolConfig, Transcript, collect_reports, comm_stats, fill_missing,
                              partition_players, player_report, public_context, run_protocol)

LN2 = math.log(2.0)


def exact_grid_means(data, loss, k, p=1):
    grid = np.stack(np.meshgrid(*([np.arange(k + 1) / k] * p), indexing="ij"), -1).reshape(-1, p)
    return np.array([loss.pointwise(np.tile(g, (len(data), 1)), data).mean() for g in grid])


# --- Partition ------------------------------------------------------------

def test_partition_small_and_deterministic():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        part = partition_players(6, 3, 0)
    assert part.sizes.sum() == 6
    np.testing.assert_array_equal(partition_players(100, 4, 9).cell, partition_players(100, 4, 9).cell)


def test_partition_concentration():
    n, d = 10 ** 4, 16
    ok = 0
    for seed in range(100):
        sizes = partition_players(n, d, seed).sizes
        ok += np.all(np.abs(sizes - n / d) <= 4 * math.sqrt(n / d))
    assert ok >= 99


def test_partition_needs_enough_players():
    with pytest.raises(InputDomainError):
        partition_players(2, 3, 0)


def test_partition_warns_below_d_log_d():
    with pytest.warns(RuntimeWarning):
        partition_players(20, 16, 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 300), st.integers(1, 20), st.integers(0, 2 ** 31))
def test_partition_disjoint_cover_property(n, d, seed):
    if n < d:
        return
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        part = partition_players(n, d, seed)
    members = np.concatenate([part.members(j) for j in range(d)])
    np.testing.assert_array_equal(np.sort(members), np.arange(n))


# --- Config ---------------------------------------------------------------

def test_config_validation():
    with pytest.raises(InputDomainError):
        ProtocolConfig("bogus", 1.0, 3)
    with pytest.raises(InputDomainError):
        ProtocolConfig("partitioned-one-bit", 1.0, 3)
    with pytest.raises(InputDomainError):
        ProtocolConfig("discretized", math.inf, 3)


def test_config_from_toml_and_json(tmp_path):
    (tmp_path / "c.toml").write_text('mechanism = "full-grid"\nepsilon = 2.0\nk = 5\nh = 2\nseed = 4\n')
    cfg = ProtocolConfig.from_file(tmp_path / "c.toml")
    assert (cfg.k, cfg.h, cfg.seed) == (5, 2, 4)
    (tmp_path / "c.json").write_text(json.dumps(cfg.to_dict()))
    assert ProtocolConfig.from_file(tmp_path / "c.json") == cfg


# --- Runs -----------------------------------------------------------------

def test_full_grid_noiseless_equals_exact_means():
    loss = get_loss("squared", 1)
    data = synthetic_dataset(loss, 500, 0)
    run = run_protocol(data, loss, ProtocolConfig("full-grid", math.inf, 4))
    np.testing.assert_allclose(run.grid_estimates, exact_grid_means(data, loss, 4), atol=1e-12)


def test_one_bit_expected_mode_equals_exact_means():
    loss = get_loss("squared", 1)
    data = synthetic_dataset(loss, 5000, 1)
    run = run_protocol(data, loss, ProtocolConfig("partitioned-one-bit", LN2, 3, expected_bits=True))
    cells = run.context.partition.cell
    per_cell = [loss.pointwise(np.full((np.sum(cells == j), 1), j / 3), data[cells == j]).mean() for j in range(4)]
    np.testing.assert_allclose(run.grid_estimates, per_cell, atol=1e-12)


def test_one_bit_total_bits():
    loss = get_loss("squared", 1)
    data = synthetic_dataset(loss, 10 ** 4, 2)
    stats = comm_stats(run_protocol(data, loss, ProtocolConfig("partitioned-one-bit", 0.5, 3)).transcript)
    assert stats["total_bits"] == 10 ** 4 and stats["max_player_bits"] == 1


def test_one_bit_hundred_players():
    loss = get_loss("squared", 1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        tr = run_protocol(synthetic_dataset(loss, 100, 0), loss, ProtocolConfig("partitioned-one-bit", 0.5, 1)).transcript
    assert comm_stats(tr)["total_bits"] == 100 and comm_stats(tr)["max_player_bits"] == 1


def test_full_grid_report_count():
    loss = get_loss("squared", 1)
    tr = run_protocol(synthetic_dataset(loss, 50, 0), loss, ProtocolConfig("full-grid", 1.0, 3)).transcript
    assert tr.payload.shape == (50, 4)
    assert comm_stats(tr)["total_bits"] == 50 * 4 * 64


def test_discretized_bits_are_log_of_grid():
    loss = get_loss("squared", 1)
    run = run_protocol(synthetic_dataset(loss, 2000, 0), loss,
                       ProtocolConfig("discretized", 1.0, 3, grid_step=1 / 1024))
    assert comm_stats(run.transcript)["max_player_bits"] == run.context.discrete.bits
    assert run.context.discrete.bits == math.ceil(math.log2(run.context.discrete.cardinality))


def test_empty_transcript_stats():
    tr = Transcript("full-grid", 0, 4, np.zeros((0, 4)), np.zeros(0, dtype=np.int64))
    assert comm_stats(tr) == {"total_bits": 0, "max_player_bits": 0, "mean_player_bits": 0.0, "n_messages": 0}


def test_contract_violation_names_player():
    base = get_loss("squared", 1)

    def pointwise(th, x):
        out = base.pointwise(th, x)
        return np.where(x[:, 0] > 0.99, 2.0, out)

    bad = LossSpec("bad", pointwise, 1, 1)
    data = np.full((10, 1), 0.5)
    data[7, 0] = 1.0
    with pytest.raises(ContractViolationError, match="player 7"):
        run_protocol(data, bad, ProtocolConfig("full-grid", 1.0, 3))


@pytest.mark.parametrize("mech,eps,kw", [("full-grid", 1.0, {}), ("partitioned-one-bit", 0.5, {}),
                                         ("discretized", 1.0, {}), ("partitioned-one-bit", 0.5,
                                                                    {"expected_bits": True})])
def test_transcript_round_trips(mech, eps, kw):
    loss = get_loss("squared", 1)
    data = synthetic_dataset(loss, 300, 0)
    tr = run_protocol(data, loss, ProtocolConfig(mech, eps, 2, **kw)).transcript
    assert Transcript.from_bytes(tr.to_bytes()) == tr
    assert Transcript.from_json(tr.to_json()) == tr


@pytest.mark.parametrize("mech,eps", [("full-grid", 1.0), ("partitioned-one-bit", 0.5), ("discretized", 1.0)])
def test_per_player_matches_batched(mech, eps):
    loss = get_loss("squared", 2)
    data = synthetic_dataset(loss, 200, 3)
    cfg = ProtocolConfig(mech, eps, 2, p=2, seed=11)
    ctx = public_context(cfg, 200)
    tr = collect_reports(data, loss, ctx)
    for i in (0, 57, 199):
        np.testing.assert_array_equal(np.asarray(player_report(i, data[i], loss, ctx)), tr.payload[i])


def test_player_api_is_non_interactive():
    assert list(inspect.signature(player_report).parameters) == ["i", "record", "loss", "ctx"]
    public_fields = {f for f in PublicContext.__dataclass_fields__}
    assert public_fields == {"config", "n", "grid", "partition", "publics", "discrete"}


def test_deterministic_runs():
    loss = get_loss("logistic", 1)
    data = synthetic_dataset(loss, 400, 0)
    cfg = ProtocolConfig("full-grid", 2.0, 3, seed=5)
    np.testing.assert_array_equal(run_protocol(data, loss, cfg).grid_estimates,
                                  run_protocol(data, loss, cfg).grid_estimates)


def test_fill_missing_neighbours():
    vals = np.array([1.0, 0.0, 3.0, 0.0, 0.0])
    out = fill_missing(vals, np.array([True, False, True, False, False]), 4, 1)
    np.testing.assert_allclose(out, [1.0, 2.0, 3.0, 3.0, 3.0])


def test_empty_cells_are_flagged_not_fatal():
    loss = get_loss("squared", 1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        run = run_protocol(synthetic_dataset(loss, 12, 0), loss, ProtocolConfig("partitioned-one-bit", 0.5, 9, seed=1))
    assert not run.filled.all()
    assert np.all(np.isfinite(run.grid_estimates))


def test_one_bit_estimates_converge():
    loss = get_loss("squared", 1)
    medians = []
    for n in (10 ** 3, 10 ** 4, 10 ** 5):
        errs = []
        for seed in range(20):
            data = synthetic_dataset(loss, n, seed)
            run = run_protocol(data, loss, ProtocolConfig("partitioned-one-bit", LN2, 1, seed=seed))
            errs.append(np.max(np.abs(run.grid_estimates - exact_grid_means(data, loss, 1))))
        medians.append(np.median(errs))
    assert medians[0] > medians[1] > medians[2]


def test_grid_cap_refuses_before_allocating():
    with pytest.raises(ResourceError):
        public_context(ProtocolConfig("full-grid", 1.0, 9, p=9), 10)
