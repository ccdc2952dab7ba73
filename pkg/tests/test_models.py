"""
Tests for domain types: delay schedules, machine models, envelopes, counters and traces
"""
import numpy as np
import pytest

from adg.core.exceptions import ContractViolation, DuplicateRatingError
from adg.models import (
    ClassificationDataset,
    CommStats,
    DelaySchedule,
    ErrorEnvelope,
    FactorState,
    LabeledExample,
    MachineModel,
    MasterBroadcast,
    MasterTable,
    RatingMatrix,
    RngState,
    RunTrace,
    TraceEvent,
)
from adg.models.protocol import BROADCAST, SEND


def test_constant_schedule_is_clamped_to_round():
    schedule = DelaySchedule("constant", d_max=3, m=2)
    assert [schedule.delay(0, k) for k in range(6)] == [0, 1, 2, 3, 3, 3]
    assert schedule.raw_delay(1, 0) == 3


def test_uniform_random_schedule_is_reproducible_and_bounded():
    a = DelaySchedule("uniform_random", d_max=4, seed=11, m=5)
    b = DelaySchedule("uniform_random", d_max=4, seed=11, m=5)
    table = a.table(200)
    np.testing.assert_array_equal(table, b.table(200))
    assert table.min() >= 0
    assert table.max() <= 4
    # late rounds are unclamped and should hit every value
    assert set(np.unique(table[10:])) == {0, 1, 2, 3, 4}


def test_adversarial_cycle_delays_one_machine_per_round():
    schedule = DelaySchedule("adversarial_cycle", d_max=5, m=3)
    raw = [[schedule.raw_delay(i, k) for i in range(3)] for k in range(9)]
    for k, row in enumerate(raw):
        assert row == [5 if i == k % 3 else 0 for i in range(3)]
        assert [schedule.delay(i, k) for i in range(3)] == [min(d, k) for d in row]


def test_schedule_validation():
    with pytest.raises(ContractViolation):
        DelaySchedule("gaussian", d_max=1)
    with pytest.raises(ContractViolation):
        DelaySchedule("constant", d_max=-1)
    with pytest.raises(ContractViolation):
        DelaySchedule("constant", d_max=1).delay(-1, 0)


def test_machine_model_validation():
    assert MachineModel(3, 1).comm_ticks == 1
    with pytest.raises(ContractViolation):
        MachineModel(0)
    with pytest.raises(ContractViolation):
        MachineModel(1, -1)


def test_error_envelope_norms():
    env = ErrorEnvelope(y=np.array([[1.0, 3.0], [2.0, 6.0]]), w_star=np.zeros(1),
                        w_star_shifted=[np.zeros(1), np.ones(1)])
    assert (env.d_max, env.m) == (1, 2)
    assert env.linf_norm() == 6.0
    assert env.delayed_mean(1) == 4.0
    np.testing.assert_allclose(ErrorEnvelope.column_errors([np.array([2.0]), np.array([0.0])],
                                                           env.w_star_shifted), [4.0, 1.0])
    with pytest.raises(ContractViolation):
        ErrorEnvelope(y=np.array([[-1.0, 0.0]]), w_star=np.zeros(1), w_star_shifted=[np.zeros(1)] * 2)


def test_comm_stats_counts():
    stats = CommStats()
    stats.record_send(0.5, count=3)
    stats.record_receive()
    stats.record_broadcast(0.25)
    stats.record_gather()
    stats.record_stale()
    assert stats.as_dict() == {"sends": 3, "receives": 1, "broadcasts": 1, "gathers": 1,
                               "stale_dropped": 1, "time_in_calls": 0.75}
    assert stats.total_calls == 6


def test_trace_jsonl_write_and_read(tmp_path):
    trace = RunTrace(algorithm="adg_bc")
    trace.record(TraceEvent(tick=1, kind=SEND, worker=0, epoch=1, basis_round=0))
    trace.record(TraceEvent(tick=2, kind=BROADCAST, worker=-1, epoch=1, objective=0.5))
    path = trace.write_jsonl(tmp_path / "trace.jsonl")
    assert RunTrace.read_jsonl(path) == trace.events
    assert trace.events_of(SEND) == trace.events[:1]


def test_trace_without_payloads_drops_broadcasts():
    trace = RunTrace(keep_payloads=False)
    trace.record_broadcast(MasterBroadcast(np.zeros(2), 0))
    assert trace.broadcasts == []


def test_master_table_initial_copies():
    w0 = np.array([1.0, 2.0])
    table = MasterTable.initial(3, w0)
    table.latest[0][0] = 9.0
    assert table.latest[1][0] == 1.0
    assert table.m == 3
    assert table.rounds_seen == [0, 0, 0]
    with pytest.raises(ContractViolation):
        MasterTable.initial(0, w0)


def test_rng_state_streams():
    a, b = RngState(5, 1), RngState(5, 1)
    assert a.generator.random() == b.generator.random()
    first = a.generator.random()
    assert first != RngState(5, 1).generator.random()
    assert a.spawn(2).stream == 2
    with pytest.raises(ContractViolation):
        RngState(-1)


def test_factor_state_checks_width():
    with pytest.raises(ContractViolation):
        FactorState(np.zeros((2, 3)), np.zeros((4, 2)))
    state = FactorState(np.zeros((2, 3)), np.zeros((4, 3)), row_offset=7)
    copy = state.copy()
    copy.p_block[0, 0] = 1.0
    assert state.p_block[0, 0] == 0.0
    assert state.k_latent == 3


def test_dataset_invariants():
    with pytest.raises(ContractViolation):
        LabeledExample(indices=[1, 0], values=[1.0, 1.0], label=1, dim=3)
    with pytest.raises(ContractViolation):
        LabeledExample(indices=[0], values=[1.0], label=0, dim=3)
    with pytest.raises(ContractViolation):
        ClassificationDataset(features=np.ones((2, 2)), labels=[1.0, 2.0])
    with pytest.raises(DuplicateRatingError):
        RatingMatrix(users=[0, 0], items=[1, 1], values=[1.0, 2.0], n_users=1, n_items=2)
    with pytest.raises(ContractViolation):
        RatingMatrix(users=[3], items=[0], values=[1.0], n_users=2, n_items=1)


def test_trace_event_kind_is_checked():
    with pytest.raises(ContractViolation):
        TraceEvent(tick=0, kind="gossip", worker=0, epoch=0)
