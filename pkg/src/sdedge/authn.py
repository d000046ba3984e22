"""Location-group authentication: epoch keys, beacon wallets, access gating.

A location group is a set of APs whose coverage intersection is the
access-granted area. The controller rotates one opaque key per member AP
each epoch; APs broadcast them in beacons; a device proves presence by
holding a current-epoch key for *every* member, each heard recently
(within `key_freshness` seconds). Possession of all keys stands in for
being inside the intersection, so the freshness window is what makes a
key stop counting once the device walks away. Group beacons fire in one
synchronized wave per period, so a device inside the area always presents
same-wave (age-zero) receipts; the default window only needs to cover
clock skew within a wave, and anything outside the area fails it.

Grants persist between checks and are revoked by: a failed
re-authentication, a change of serving AP, or missing the
re-authentication grace window after a rotation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

MODE_NONE = "None"
MODE_LA = "LEDGE-LA"
MODE_PAP = "LEDGE-PAP"
MODES = (MODE_NONE, MODE_LA, MODE_PAP)

DENY_MISSING = "missing-keys"
DENY_STALE = "stale-epoch"
DENY_UNKNOWN_GROUP = "unknown-group"


@dataclass(frozen=True)
class LocationGroup:
    group_id: str
    members: frozenset[str]

    def __post_init__(self):
        if len(self.members) < 2:
            raise ValueError(f"location group {self.group_id} needs at least 2 APs")


@dataclass(frozen=True)
class BeaconKey:
    key_id: str
    ap: str
    group_id: str
    epoch: int
    issued_at: float


@dataclass
class WalletEntry:
    key: BeaconKey
    received_at: float


@dataclass
class KeyWallet:
    md_id: str
    held: dict[str, WalletEntry] = field(default_factory=dict)  # latest per AP

    def receive(self, key: BeaconKey, received_at: float) -> None:
        cur = self.held.get(key.ap)
        if cur is None or key.epoch >= cur.key.epoch:
            self.held[key.ap] = WalletEntry(key=key, received_at=received_at)


@dataclass
class AuthDecision:
    md_id: str
    group_id: str
    granted: bool
    reason: str | None
    epoch: int
    at: float


@dataclass
class Grant:
    epoch: int
    at: float


class AuthnService:
    """Controller-side key state plus per-device wallets and grants."""

    def __init__(self, mode: str = MODE_NONE, key_freshness: float = 0.05):
        if mode not in MODES:
            raise ValueError(f"unknown access-control mode {mode!r}")
        self.mode = mode
        self.key_freshness = key_freshness
        self.groups: dict[str, LocationGroup] = {}
        self.epochs: dict[str, int] = {}
        self.rotated_at: dict[str, float] = {}
        self.ap_keys: dict[str, BeaconKey] = {}
        self.pending_delivery: dict[str, BeaconKey] = {}  # AP down at rotation time
        self.group_of: dict[str, str] = {}
        self.wallets: dict[str, KeyWallet] = {}
        self.grants: dict[tuple[str, str], Grant] = {}
        self.auth_log: list[AuthDecision] = []

    @property
    def active(self) -> bool:
        return self.mode != MODE_NONE

    # -- controller side -----------------------------------------------------

    def register_group(self, group: LocationGroup) -> None:
        for ap in group.members:
            other = self.group_of.get(ap)
            if other is not None and other != group.group_id:
                raise ValueError(f"AP {ap} already belongs to group {other}")
        self.groups[group.group_id] = group
        self.epochs.setdefault(group.group_id, 0)
        for ap in group.members:
            self.group_of[ap] = group.group_id

    def rotate_group_keys(self, group_id: str, now: float, down_aps=()) -> list[BeaconKey]:
        """Advance the epoch and hand one fresh key to every member AP.

        Keys for unreachable APs are parked in `pending_delivery` and handed
        over via deliver_pending() once the AP is back.
        """
        group = self.groups[group_id]
        epoch = self.epochs[group_id] + 1
        self.epochs[group_id] = epoch
        self.rotated_at[group_id] = now
        down = set(down_aps)
        keys = []
        for ap in sorted(group.members):
            key = BeaconKey(
                key_id=f"k/{group_id}/{epoch}/{ap}",
                ap=ap,
                group_id=group_id,
                epoch=epoch,
                issued_at=now,
            )
            keys.append(key)
            if ap in down:
                self.pending_delivery[ap] = key
            else:
                self.ap_keys[ap] = key
                self.pending_delivery.pop(ap, None)
        return keys

    def deliver_pending(self, ap: str) -> BeaconKey | None:
        key = self.pending_delivery.pop(ap, None)
        if key is not None:
            self.ap_keys[ap] = key
        return key

    def current_key(self, ap: str) -> BeaconKey | None:
        return self.ap_keys.get(ap)

    # -- device side -----------------------------------------------------------

    def wallet(self, md_id: str) -> KeyWallet:
        w = self.wallets.get(md_id)
        if w is None:
            w = self.wallets[md_id] = KeyWallet(md_id)
        return w

    def receive_beacon(self, md_id: str, ap: str, received_at: float) -> BeaconKey | None:
        key = self.ap_keys.get(ap)
        if key is not None:
            self.wallet(md_id).receive(key, received_at)
        return key

    # -- decisions ----------------------------------------------------------------

    def authenticate(self, md_id: str, group_id: str, now: float) -> AuthDecision:
        """Grant iff the wallet shows a fresh, current-epoch key per member AP.

        A denial revokes any standing grant (a failed re-authentication is
        exactly the revocation trigger after rotations).
        """
        group = self.groups.get(group_id)
        if group is None:
            decision = AuthDecision(md_id, group_id, False, DENY_UNKNOWN_GROUP, -1, now)
            self.auth_log.append(decision)
            return decision

        epoch = self.epochs[group_id]
        held = self.wallet(md_id).held
        reason = None
        for ap in sorted(group.members):
            entry = held.get(ap)
            if entry is None or now - entry.received_at > self.key_freshness:
                reason = DENY_MISSING
                break
            if entry.key.epoch != epoch:
                reason = reason or DENY_STALE
        if reason is None and epoch == 0:
            reason = DENY_MISSING  # no keys ever distributed

        granted = reason is None
        if granted:
            self.grants[(md_id, group_id)] = Grant(epoch=epoch, at=now)
        else:
            self.grants.pop((md_id, group_id), None)
        decision = AuthDecision(md_id, group_id, granted, reason, epoch, now)
        self.auth_log.append(decision)
        return decision

    def revoke(self, md_id: str, group_id: str | None = None) -> None:
        if group_id is not None:
            self.grants.pop((md_id, group_id), None)
        else:
            for key in [k for k in self.grants if k[0] == md_id]:
                del self.grants[key]

    def expire_stale_grants(self, now: float, grace: float) -> list[tuple[str, str]]:
        """Revoke grants whose epoch lapsed longer than `grace` ago.

        This is the "missed re-authentication after rotation" rule: devices
        still in the area renew off the next beacon wave well inside the
        grace window and never observe a gap.
        """
        expired = []
        for (md, gid), grant in list(self.grants.items()):
            if grant.epoch < self.epochs.get(gid, 0) and now > self.rotated_at.get(gid, 0.0) + grace:
                expired.append((md, gid))
                del self.grants[(md, gid)]
        return expired

    def is_granted(self, md_id: str, group_id: str) -> bool:
        return (md_id, group_id) in self.grants

    def gate_traffic(self, ap: str, md_id: str) -> str:
        """Per-packet gate: 'forward' or 'drop'.

        Mode None always forwards; otherwise traffic through a grouped AP
        requires a standing grant for that AP's group.
        """
        if not self.active:
            return "forward"
        group_id = self.group_of.get(ap)
        if group_id is None:
            return "forward"
        return "forward" if self.is_granted(md_id, group_id) else "drop"
