import pytest

from sdedge.authn import (
    DENY_MISSING,
    DENY_STALE,
    DENY_UNKNOWN_GROUP,
    MODE_LA,
    MODE_NONE,
    AuthnService,
    LocationGroup,
)


def make_service(mode=MODE_LA, freshness=0.25):
    svc = AuthnService(mode=mode, key_freshness=freshness)
    svc.register_group(LocationGroup("G1", frozenset({"AP1", "AP2", "AP3"})))
    return svc


def collect_all(svc, md, now):
    for ap in ("AP1", "AP2", "AP3"):
        svc.receive_beacon(md, ap, now)


def test_rotation_yields_one_fresh_key_per_member():
    svc = make_service()
    keys = svc.rotate_group_keys("G1", now=0.0)
    assert len(keys) == 3
    assert len({k.epoch for k in keys}) == 1
    assert len({k.key_id for k in keys}) == 3
    assert {k.ap for k in keys} == {"AP1", "AP2", "AP3"}


def test_two_rotations_advance_epoch_and_retire_old_keys():
    svc = make_service()
    first = svc.rotate_group_keys("G1", now=0.0)
    svc.rotate_group_keys("G1", now=10.0)
    assert svc.epochs["G1"] == 2
    held_ids = {svc.current_key(ap).key_id for ap in ("AP1", "AP2", "AP3")}
    assert held_ids.isdisjoint({k.key_id for k in first})


def test_group_requires_two_members():
    with pytest.raises(ValueError):
        LocationGroup("G", frozenset({"AP1"}))


def test_full_fresh_wallet_grants():
    svc = make_service()
    svc.rotate_group_keys("G1", now=0.0)
    collect_all(svc, "M1", now=0.1)
    decision = svc.authenticate("M1", "G1", now=0.2)
    assert decision.granted
    assert svc.gate_traffic("AP1", "M1") == "forward"


def test_missing_key_denied():
    svc = make_service()
    svc.rotate_group_keys("G1", now=0.0)
    svc.receive_beacon("M1", "AP1", 0.1)
    svc.receive_beacon("M1", "AP2", 0.1)
    decision = svc.authenticate("M1", "G1", now=0.2)
    assert not decision.granted and decision.reason == DENY_MISSING


def test_stale_epoch_denied_after_rotation():
    svc = make_service()
    svc.rotate_group_keys("G1", now=0.0)
    collect_all(svc, "M1", now=0.1)
    svc.rotate_group_keys("G1", now=0.15)
    decision = svc.authenticate("M1", "G1", now=0.2)
    assert not decision.granted and decision.reason == DENY_STALE


def test_old_receipt_no_longer_proves_presence():
    svc = make_service(freshness=0.25)
    svc.rotate_group_keys("G1", now=0.0)
    collect_all(svc, "M1", now=0.1)
    decision = svc.authenticate("M1", "G1", now=1.0)
    assert not decision.granted and decision.reason == DENY_MISSING


def test_denial_revokes_standing_grant():
    svc = make_service()
    svc.rotate_group_keys("G1", now=0.0)
    collect_all(svc, "M1", now=0.1)
    assert svc.authenticate("M1", "G1", now=0.2).granted
    svc.rotate_group_keys("G1", now=0.3)
    assert not svc.authenticate("M1", "G1", now=0.35).granted
    assert svc.gate_traffic("AP2", "M1") == "drop"


def test_unknown_group():
    svc = make_service()
    decision = svc.authenticate("M1", "G9", now=0.0)
    assert not decision.granted and decision.reason == DENY_UNKNOWN_GROUP


def test_grant_expiry_after_missed_rotation():
    svc = make_service()
    svc.rotate_group_keys("G1", now=0.0)
    collect_all(svc, "M1", 0.1)
    svc.authenticate("M1", "G1", 0.2)
    svc.rotate_group_keys("G1", now=10.0)
    assert svc.is_granted("M1", "G1")  # grace: not yet revoked
    assert svc.expire_stale_grants(now=10.1, grace=0.3) == []
    assert svc.expire_stale_grants(now=10.4, grace=0.3) == [("M1", "G1")]
    assert not svc.is_granted("M1", "G1")


def test_gate_mode_none_always_forwards():
    svc = make_service(mode=MODE_NONE)
    assert svc.gate_traffic("AP1", "M1") == "forward"


def test_gate_ungrouped_ap_forwards():
    svc = make_service()
    assert svc.gate_traffic("AP9", "M1") == "forward"


def test_default_window_accepts_same_wave_receipts_only():
    # group beacons land in one synchronized wave; an in-area device always
    # presents age-zero receipts while a departed one holds last-wave ones
    svc = AuthnService(mode=MODE_LA)
    svc.register_group(LocationGroup("G1", frozenset({"AP1", "AP2", "AP3"})))
    svc.rotate_group_keys("G1", now=0.0)
    collect_all(svc, "M1", now=0.105)
    assert svc.authenticate("M1", "G1", now=0.105).granted
    # one beacon period later without fresh receipts: presence proof expired
    assert not svc.authenticate("M1", "G1", now=0.205).granted


def test_key_delivery_deferred_for_down_ap():
    svc = make_service()
    keys = svc.rotate_group_keys("G1", now=0.0, down_aps={"AP2"})
    assert len(keys) == 3
    assert svc.current_key("AP2") is None
    assert "AP2" in svc.pending_delivery
    delivered = svc.deliver_pending("AP2")
    assert delivered is not None and svc.current_key("AP2") == delivered
