import random

import pytest
from scipy.stats import chisquare

from conftest import assert_consistent
from topoprobe.netsim import OBSERVER, OBSERVERS
from topoprobe.node import (
    Behavior,
    Message,
    MessageKind,
    NodeState,
    TxOutcome,
    expire_requests,
    handle_getdata,
    handle_inv,
    handle_tx,
    limit_orphans,
    pick_eviction_victim,
)
from topoprobe.time_utils import REQUEST_TIMEOUT
from topoprobe.txmodel import (
    HASH_BITS,
    HASH_SPACE,
    Outpoint,
    Transaction,
    build_cleansing_kit,
    build_conflict_set,
    build_funding_root,
    build_marker,
)


@pytest.fixture
def root():
    return build_funding_root(4, nonce=3)


@pytest.fixture
def state(root):
    node = NodeState(node_id=0, peers={1, 2, 3}, observers=OBSERVERS, rng=random.Random(5))
    handle_tx(node, OBSERVER, root, 0)
    return node


# ==================== inv / getdata ====================

def test_inv_unknown_requests_from_offerer(state):
    out = handle_inv(state, 1, [42], 0)
    assert out == [Message.getdata(0, 1, [42])]
    assert state.pending_requests[42].deadline == REQUEST_TIMEOUT


def test_inv_skips_orphans(state, root):
    parent = build_conflict_set(build_funding_root(1, nonce=99).outpoint(0), 1)[0]
    marker = build_marker(parent)
    handle_tx(state, 1, marker, 0)
    assert handle_inv(state, 2, [marker.txid], 10) == []


def test_inv_while_pending_queues_offerer(state):
    handle_inv(state, 1, [42], 0)
    assert handle_inv(state, 2, [42], 500) == []
    assert list(state.pending_requests[42].queue) == [(2, 500)]


def test_same_peer_reannounce_restarts_request(state):
    handle_inv(state, OBSERVER, [42], 0)
    out = handle_inv(state, OBSERVER, [42], 110_000)
    assert out == [Message.getdata(0, OBSERVER, [42])]
    assert state.pending_requests[42].deadline == 110_000 + REQUEST_TIMEOUT


def test_unblockable_requests_anyway(state):
    state.behavior = Behavior.UNBLOCKABLE
    handle_inv(state, 1, [42], 0)
    assert handle_inv(state, 2, [42], 500) == [Message.getdata(0, 2, [42])]


def test_inv_from_unknown_peer_dropped(state):
    assert handle_inv(state, 77, [42], 0) == []
    assert 42 not in state.pending_requests


def test_getdata(state, root):
    assert handle_getdata(state, 1, [root.txid]) == [Message.transaction(0, 1, root)]
    assert handle_getdata(state, 1, [12345]) == []


def test_getdata_does_not_serve_orphans(state):
    parent = build_conflict_set(build_funding_root(1, nonce=99).outpoint(0), 1)[0]
    marker = build_marker(parent)
    handle_tx(state, 1, marker, 0)
    assert handle_getdata(state, 2, [marker.txid]) == []


# ==================== tx ====================

def test_accept_relays_to_all_but_sender(state, root):
    tx = Transaction(inputs=(root.outpoint(0),), outputs=1)
    outcome, out = handle_tx(state, 1, tx, 0)
    assert outcome == TxOutcome.ACCEPT
    assert sorted(m.recipient for m in out) == [2, 3]
    assert all(m.kind == MessageKind.INV and m.ids == (tx.txid,) for m in out)
    assert_consistent(state)


def test_conflict_rejected(state, root):
    parents_and_flood = build_conflict_set(root.outpoint(1), 2)
    flood, parent = parents_and_flood[-1], parents_and_flood[0]
    handle_tx(state, 1, flood, 0)
    outcome, out = handle_tx(state, 2, parent, 10)
    assert outcome == TxOutcome.REJECTED_CONFLICT
    assert out == []
    assert parent.txid not in state.mempool


def test_marker_before_parent_is_orphan(state, root):
    parent = build_conflict_set(root.outpoint(1), 1)[0]
    outcome, out = handle_tx(state, 1, build_marker(parent), 0)
    assert outcome == TxOutcome.ORPHANED
    assert out == []
    assert len(state.orphan_pool) == 1


def test_missing_output_of_known_parent_invalid(state, root):
    tx = Transaction(inputs=(Outpoint(root.txid, 99),), outputs=1)
    outcome, _ = handle_tx(state, 1, tx, 0)
    assert outcome == TxOutcome.REJECTED_INVALID


def test_duplicate(state, root):
    outcome, out = handle_tx(state, 1, root, 0)
    assert outcome == TxOutcome.DUPLICATE
    assert out == []


def test_cleanser_promotes_one_squatter(state, root):
    cleanser, squatters = build_cleansing_kit(root.outpoint(2))
    for squatter in squatters:
        handle_tx(state, OBSERVER, squatter, 0)
    assert len(state.orphan_pool) == 100

    outcome, out = handle_tx(state, OBSERVER, cleanser, 100)
    assert outcome == TxOutcome.ACCEPT
    assert state.orphan_pool == {}
    accepted = [s for s in squatters if s.txid in state.mempool]
    assert len(accepted) == 1
    assert {m.ids for m in out} == {(cleanser.txid,), (accepted[0].txid,)}
    assert_consistent(state)


def test_recursive_promotion(state, root):
    parent = Transaction(inputs=(root.outpoint(3),), outputs=1)
    child = Transaction(inputs=(parent.outpoint(0),), outputs=1)
    grandchild = Transaction(inputs=(child.outpoint(0),), outputs=1)
    handle_tx(state, 1, grandchild, 0)
    handle_tx(state, 1, child, 1)
    assert len(state.orphan_pool) == 2

    handle_tx(state, 1, parent, 2)
    assert {parent.txid, child.txid, grandchild.txid} <= set(state.mempool)
    assert state.orphan_pool == {}
    assert_consistent(state)


def test_tx_clears_pending(state, root):
    tx = Transaction(inputs=(root.outpoint(0),), outputs=1)
    handle_inv(state, 1, [tx.txid], 0)
    handle_tx(state, 1, tx, 100)
    assert tx.txid not in state.pending_requests


# ==================== таймауты ====================

def test_expired_request_goes_to_next_offerer(state):
    handle_inv(state, 1, [42], 0)
    handle_inv(state, 2, [42], 50)
    assert expire_requests(state, REQUEST_TIMEOUT - 1) == []
    assert expire_requests(state, REQUEST_TIMEOUT) == [Message.getdata(0, 2, [42])]


def test_five_silent_offerers_tried_in_order(state):
    state.peers = set(range(1, 7))
    handle_inv(state, 1, [42], 0)
    for peer in range(2, 7):
        handle_inv(state, peer, [42], peer)

    asked = []
    for step in range(1, 6):
        out = expire_requests(state, step * REQUEST_TIMEOUT)
        assert len(out) == 1
        asked.append(out[0].recipient)
    assert asked == [2, 3, 4, 5, 6]

    assert expire_requests(state, 6 * REQUEST_TIMEOUT) == []
    assert 42 not in state.pending_requests


def test_expire_skips_unlinked_offerer(state):
    handle_inv(state, 1, [42], 0)
    handle_inv(state, 2, [42], 1)
    handle_inv(state, 3, [42], 2)
    state.peers.discard(2)
    assert expire_requests(state, REQUEST_TIMEOUT) == [Message.getdata(0, 3, [42])]


# ==================== вытеснение ====================

def _scaled(prefix: int) -> int:
    return prefix << (HASH_BITS - 8)


def test_victim_is_closest_higher():
    ids = [_scaled(0x20), _scaled(0x40), _scaled(0x80)]
    assert pick_eviction_victim(ids, _scaled(0x30)) == 1
    assert pick_eviction_victim(ids, _scaled(0x40)) == 2
    assert pick_eviction_victim(ids, 0) == 0


def test_victim_wraps_around():
    ids = [_scaled(0x20), _scaled(0x40), _scaled(0x80)]
    assert pick_eviction_victim(ids, _scaled(0x90)) == 0
    assert pick_eviction_victim(ids, _scaled(0x80)) == 0


def test_limit_orphans_to_capacity(state, root):
    state.orphan_capacity = 2
    for k in range(3):
        parent = Transaction(inputs=(Outpoint(k + 1, 0),), outputs=1)
        state.orphan_pool[build_marker(parent).txid] = None
    assert limit_orphans(state, random.Random(1)) == 1
    assert len(state.orphan_pool) == 2
    assert state.evictions == 1


def test_eviction_proportional_to_gap_below():
    rng = random.Random(2024)
    ids = sorted(rng.getrandbits(HASH_BITS) for _ in range(101))
    gaps = [ids[0] + HASH_SPACE - ids[-1]] + [b - a for a, b in zip(ids, ids[1:])]

    draws = 10 ** 5
    counts = [0] * len(ids)
    for _ in range(draws):
        counts[pick_eviction_victim(ids, rng.getrandbits(HASH_BITS))] += 1

    expected = [draws * gap / HASH_SPACE for gap in gaps]
    _, p_value = chisquare(counts, expected)
    assert p_value > 0.01


@pytest.mark.parametrize("markers", [1, 4])
def test_ground_marker_rarely_evicted(markers):
    rng = random.Random(7 + markers)
    low = 1 << (HASH_BITS - 1)
    trials = 10 ** 5
    bound = 2 / 101 + 2 ** -20

    hits = 0
    for _ in range(trials):
        node = NodeState(node_id=0, peers=set(), observers=OBSERVERS, rng=rng)
        node.orphan_capacity = 100 + markers - 1
        own = {low + rng.getrandbits(HASH_BITS - 20) for _ in range(markers)}
        for txid in own:
            node.orphan_pool[txid] = None
        while len(node.orphan_pool) < 100 + markers:
            node.orphan_pool[rng.getrandbits(HASH_BITS)] = None

        assert limit_orphans(node, rng) == 1
        hits += len(own - set(node.orphan_pool))

    share = hits / trials
    error = (bound * (1 - bound) / trials) ** 0.5
    assert share <= bound + 3 * error
    # Нижний сосед ближайшего маркера в среднем на 1/101 пространства ниже
    assert share >= 1 / 101 - 3 * error


@pytest.mark.parametrize("k", [2, 10, 57, 100])
def test_conflict_set_leaves_one_member(root, k):
    node = NodeState(node_id=0, peers={1, 2, 3}, observers=OBSERVERS, rng=random.Random(k))
    handle_tx(node, OBSERVER, root, 0)
    members = build_conflict_set(root.outpoint(1), k - 1)
    random.Random(k).shuffle(members)

    for step, tx in enumerate(members):
        handle_tx(node, 1 + step % 3, tx, step)
        assert_consistent(node)

    kept = [tx for tx in members if tx.txid in node.mempool]
    assert kept == [members[0]]
