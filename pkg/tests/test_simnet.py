import pytest

from sdedge.report import render_csv, render_json
from sdedge.scenario import apply_overrides, bundled_scenario_path, parse_scenario, parse_scenario_text
from sdedge.simnet import World


def load(name, **overrides):
    sc = parse_scenario(bundled_scenario_path(name))
    params = apply_overrides(sc.params, {k: str(v) for k, v in overrides.items()})
    return sc, params


def series_of(report, stream):
    return report.series(stream)


def first_nonzero_after(series, t0):
    for t, v in series:
        if t >= t0 and v > 0:
            return t
    return None


# --- movement & association ---------------------------------------------------

def test_move_within_coverage_changes_nothing():
    sc = parse_scenario_text(
        """
[params]
m = 5
duration = 4.0
[topology]
controller C1 key=3
switch SW1
ap AP1 pos=0,0 radius=20 capacity=11 techs=wifi partition=C1
md M1 pos=1,1
link AP1 SW1 latency=0.001 rate=100
link SW1 C1 latency=0.001 rate=100
[traces]
move M1 1.0 3,3 staying
""",
        "inner-move",
    )
    world = World(sc)
    world.run()
    assert world.handover_rows == []
    assert world.mobility.association_ap["M1"] == "AP1"


def test_same_partition_ap_change_has_no_controller_handover():
    sc, params = load("fig6", mode="None")
    world = World(sc, params)
    world.run()
    kinds = [h["kind"] for h in world.handover_rows]
    assert kinds == ["reassociate"]
    assert world.handover_rows[0]["from_ap"] == "AP1"
    assert world.handover_rows[0]["to_ap"] == "AP3"
    assert world.handover_rows[0]["messages"] == 0  # no controller protocol ran
    assert world.protocol_log == []


def test_cross_partition_move_runs_the_handover_protocol_in_order():
    sc = parse_scenario(bundled_scenario_path("fig2"))
    world = World(sc)
    world.run()
    steps = [step for _, step, _ in world.protocol_log]
    assert steps == ["locate-supervisor", "read-supervisor", "fetch-session", "update-supervisor"]
    row = [h for h in world.handover_rows if h["md"] == "M7"][0]
    assert row["from_controller"] == "C16" and row["to_controller"] == "C3"
    assert row["messages"] > 0
    rec = world.mobility.get_supervisory("M7")
    assert world.name_of[rec.previous] == "C16"
    assert world.name_of[rec.current] == "C3"


def test_personal_ap_migration_preserves_md_visible_state():
    sc, params = load("fig6", mode="LEDGE-PAP")
    world = World(sc, params)
    world.engine.run_until(22.0)
    assoc = world.mobility.associations["M6"]
    before = assoc.md_visible()
    ap_mac_before = assoc.ap_mac
    world.engine.run_until(23.0)
    after = world.mobility.associations["M6"]
    assert after is assoc
    assert after.md_visible()[0] == before[0]          # md_mac
    assert after.md_visible()[1] == before[1]          # association_id
    assert after.ap_mac != ap_mac_before
    assert after.frame_seq >= before[2]
    kinds = [h["kind"] for h in world.handover_rows]
    assert kinds == ["pap-migrate"]


# --- fig6 timeline ------------------------------------------------------------

def fig6_report(mode):
    sc, params = load("fig6", mode=mode)
    return World(sc, params).run()


def test_fig6_none_mode_recovers_after_reassociation():
    report = fig6_report("None")
    s = series_of(report, "F1")
    by_t = dict(s)
    assert by_t[22.0] == 8.0
    assert by_t[22.1] == 0.0
    t_rec = first_nonzero_after(s, 22.1)
    assert t_rec is not None
    assert t_rec <= 22.1 + 0.5 + 0.21  # association + reassociation delay window
    assert by_t[35.9] == 8.0  # continuous after recovery, including the return


def test_fig6_la_zero_while_outside_and_4s_lag():
    report = fig6_report("LEDGE-LA")
    s = series_of(report, "F1")
    by_t = dict(s)
    assert by_t[22.0] == 8.0
    for t, v in s:
        if 22.1 <= t <= 39.8:
            assert v == 0.0, f"LA stream leaked at t={t}"
    t_rec = first_nonzero_after(s, 35.9)
    assert t_rec is not None and abs(t_rec - (35.9 + 4.0)) <= 0.2


def test_fig6_la_and_pap_series_pointwise_equal():
    la = fig6_report("LEDGE-LA")
    pap = fig6_report("LEDGE-PAP")
    assert series_of(la, "F1") == series_of(pap, "F1")


def test_fig6_la_survives_rotations_while_inside():
    report = fig6_report("LEDGE-LA")
    by_t = dict(series_of(report, "F1"))
    # rotations at 10 and 20 must not dent in-area throughput
    for t in (9.9, 10.0, 10.1, 10.2, 19.9, 20.0, 20.1, 20.2):
        assert by_t[t] == 8.0, f"rotation dip at {t}"


def test_wallet_fills_after_one_beacon_period_dwell():
    sc, params = load("fig6", mode="LEDGE-LA")
    world = World(sc, params)
    world.engine.run_until(0.3)
    wallet = world.authn.wallet("M6")
    assert set(wallet.held) == {"AP1", "AP2", "AP3"}
    assert world.authn.is_granted("M6", "G1")


# --- transport model ------------------------------------------------------------

def test_throughput_is_capped_by_bottleneck():
    sc = parse_scenario_text(
        """
[params]
m = 5
duration = 2.0
[topology]
controller C1 key=3
switch SW1
ap AP1 pos=0,0 radius=20 capacity=11 techs=wifi partition=C1
md M1 pos=1,1
link AP1 SW1 latency=0.001 rate=6
link SW1 C1 latency=0.001 rate=100
[flows]
flow F1 md=M1 dst=C1 type=tcp demand=8 tech=wifi start=0.0
""",
        "capped",
    )
    report = World(sc).run()
    values = {v for _, v in report.series("F1") if v > 0}
    assert values == {6.0}  # min(demand 8, link 6)


def test_delivered_volume_respects_bottleneck_budget():
    report = fig6_report("None")
    delivered = report.delivered_mbit("F1")
    assert delivered <= 11.0 * report.duration + 1e-6


# --- failures ---------------------------------------------------------------------

AP_FAIL = """
[params]
m = 5
duration = 6.0
[topology]
controller C1 key=3
switch SW1
ap AP1 pos=0,0 radius=30 capacity=11 techs=wifi partition=C1
ap AP2 pos=10,0 radius=30 capacity=11 techs=wifi partition=C1
md M1 pos=1,1
md M2 pos=2,2
md M3 pos=3,3
link AP1 SW1 latency=0.001 rate=100
link AP2 SW1 latency=0.001 rate=100
link SW1 C1 latency=0.001 rate=100
[flows]
flow F1 md=M1 dst=C1 type=tcp demand=2 tech=wifi start=0.0
flow F2 md=M2 dst=C1 type=tcp demand=2 tech=wifi start=0.0
flow F3 md=M3 dst=C1 type=tcp demand=2 tech=wifi start=0.0
[failures]
fail ap AP1 at=2.0
"""


def test_ap_failure_reassigns_associated_mds():
    world = World(parse_scenario_text(AP_FAIL, "apfail"))
    report = world.run()
    recoveries = [h for h in world.handover_rows if h["kind"] == "ap-recovery"]
    assert len(recoveries) == 3  # ties put all three MDs on AP1 initially
    assert all(r["to_ap"] == "AP2" for r in recoveries)
    for stream in ("F1", "F2", "F3"):
        assert first_nonzero_after(report.series(stream), 2.5) is not None


def test_failing_a_dead_target_is_a_noop():
    text = AP_FAIL + "fail ap AP1 at=3.0\n"
    world = World(parse_scenario_text(text, "apfail2"))
    world.run()  # second failure of AP1 must not blow up
    assert len([h for h in world.handover_rows if h["kind"] == "ap-recovery"]) == 3


CTRL_FAIL = """
[params]
m = 5
duration = 8.0
r = 2
[topology]
controller C3 key=3
controller C10 key=10
controller C16 key=16
switch SW1
ap AP1 pos=0,0 radius=10 capacity=11 techs=wifi partition=C3
ap AP2 pos=40,0 radius=10 capacity=11 techs=wifi partition=C10
ap AP3 pos=80,0 radius=10 capacity=11 techs=wifi partition=C16
md M7 pos=80,2
link AP1 SW1 latency=0.001 rate=100
link AP2 SW1 latency=0.001 rate=100
link AP3 SW1 latency=0.001 rate=100
link SW1 C3 latency=0.001 rate=100
link SW1 C10 latency=0.001 rate=100
link SW1 C16 latency=0.001 rate=100
[flows]
flow F1 md=M7 dst=SW1 type=tcp demand=2 tech=wifi start=0.0
[traces]
move M7 5.0 0,2 staying
[failures]
fail controller C16 at=3.0
"""


def test_controller_crash_before_handover_uses_replica_session():
    # M7 starts under C16; C16 dies at t=3; the move at t=5 still hands the
    # session over to C3, served from C16's successor replica
    world = World(parse_scenario_text(CTRL_FAIL, "ctrlfail"))
    report = world.run()
    assert report.record_losses == []
    rec = world.mobility.get_supervisory("M7")
    assert world.name_of[rec.current] == "C3"
    handover = [h for h in world.handover_rows if h["kind"] in ("reassociate", "pap-migrate")]
    assert handover and handover[0]["to_controller"] == "C3"
    # stream recovers after the move into AP1 coverage
    assert first_nonzero_after(report.series("F1"), 5.0) is not None


# --- determinism ---------------------------------------------------------------------

def test_identical_seed_runs_are_identical():
    sc, params = load("fig6", mode="LEDGE-LA")
    w1, w2 = World(sc, params), World(sc, params)
    r1, r2 = w1.run(), w2.run()
    assert w1.engine.trace_digest() == w2.engine.trace_digest()
    assert render_csv(r1) == render_csv(r2)
    assert render_json(r1) == render_json(r2)


def test_different_seeds_differ_in_trace_only_where_randomness_enters():
    # fig6 has no stochastic elements, so even different seeds agree on the
    # series; the report header still carries the seed
    sc, p1 = load("fig6", mode="None", seed=1)
    _, p2 = load("fig6", mode="None", seed=2)
    r1, r2 = World(sc, p1).run(), World(sc, p2).run()
    assert r1.throughput == r2.throughput
    assert render_json(r1) != render_json(r2)
