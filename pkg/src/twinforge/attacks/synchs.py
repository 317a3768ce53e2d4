"""Synchronous single-shot BFT machine on a half-delta tick clock.

n = 2f+1; a commit certificate is f+1 votes.  One tick is half the
assumed network delay bound, so the protocol constants are: blame a
silent leader after 6 ticks (3 delta), wait 2 ticks (delta) after
quitting a view, and commit 4 ticks (2 delta) after voting provided the
view saw no blame and no equivocation.  Events must arrive in
non-decreasing tick order; the scheduler guarantees that.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from ..netsim import BROADCAST, AuthorId, Outbound, TimerRequest

TICKS_PER_DELTA = 2
BLAME_AFTER = 3 * TICKS_PER_DELTA
QUIT_WAIT = TICKS_PER_DELTA
COMMIT_WAIT = 2 * TICKS_PER_DELTA


@dataclass(frozen=True)
class SyncValue:
    """A proposed value with its chain parent; v0 is the genesis value."""

    id: str
    parent_id: Optional[str]


@dataclass(frozen=True)
class SyncCC:
    value: SyncValue
    voters: frozenset[AuthorId]


GENESIS_VALUE = SyncValue("v0", None)
GENESIS_CC = SyncCC(GENESIS_VALUE, frozenset())


@dataclass
class SyncHsNode:
    author: AuthorId
    num_authors: int
    f: int
    input_value: str
    leader_of: dict  # view -> AuthorId

    view: int = 1
    clock: int = 0
    highest_cc: SyncCC = GENESIS_CC
    values: dict = field(default_factory=lambda: {"v0": GENESIS_VALUE})
    votes: dict = field(default_factory=dict)      # value id -> author set
    blames: dict = field(default_factory=dict)     # view -> author set
    proposal_seen: dict = field(default_factory=dict)  # view -> value id
    voted_views: set = field(default_factory=set)
    quit_views: set = field(default_factory=set)
    equivocated_views: set = field(default_factory=set)
    proposed_views: set = field(default_factory=set)
    commits: list = field(default_factory=list)

    @property
    def cc_threshold(self) -> int:
        return self.f + 1

    def commit_log(self) -> list[str]:
        return list(self.commits)

    def depth(self, value: SyncValue) -> int:
        d = 0
        while value.parent_id is not None:
            value = self.values[value.parent_id]
            d += 1
        return d

    def on_start(self) -> list:
        out = [TimerRequest(BLAME_AFTER, ("no-proposal", self.view))]
        if self.leader_of.get(self.view) == self.author:
            out.extend(self._propose())
        return out

    def step(self, kind: str, body, now: int) -> list:
        if now < self.clock:
            raise RuntimeError("events delivered out of tick order")
        self.clock = now
        if kind == "proposal":
            return self._on_proposal(*body)
        if kind == "vote":
            return self._on_vote(*body)
        if kind == "blame":
            return self._on_blames(*body)
        if kind == "status":
            return self._on_status(*body)
        if kind == "timer":
            return self._on_timer(body)
        raise ValueError(f"unexpected event kind {kind!r}")

    def _propose(self) -> list:
        if self.view in self.proposed_views:
            return []
        self.proposed_views.add(self.view)
        value = SyncValue(f"{self.input_value}@{self.view}",
                          self.highest_cc.value.id)
        self.values[value.id] = value
        return [Outbound("proposal", self.view, (self.view, value), BROADCAST)]

    def _extends_highest(self, value: SyncValue) -> bool:
        anchor = self.highest_cc.value.id
        cursor: Optional[SyncValue] = value
        while cursor is not None and cursor.parent_id is not None:
            if cursor.parent_id == anchor:
                return True
            cursor = self.values.get(cursor.parent_id)
        return False

    def _consider_vote(self, view: int, value: SyncValue) -> list:
        if view != self.view or view in self.voted_views:
            return []
        if view in self.quit_views or not self._extends_highest(value):
            return []
        self.voted_views.add(view)
        self._record_vote(value, self.author)
        return [
            Outbound("vote", view, (view, value, self.author), BROADCAST,
                     exclude_self=True),
            TimerRequest(COMMIT_WAIT, ("commit", view, value.id)),
        ]

    def _on_proposal(self, view: int, value: SyncValue) -> list:
        self.values.setdefault(value.id, value)
        seen = self.proposal_seen.get(view)
        if seen is not None and seen != value.id:
            self.equivocated_views.add(view)
            blame = (view, self.author)
            return [Outbound("blame", view, blame, BROADCAST, exclude_self=True)]
        self.proposal_seen[view] = value.id
        return self._consider_vote(view, value)

    def _on_vote(self, view: int, value: SyncValue, voter: AuthorId) -> list:
        self.values.setdefault(value.id, value)
        self._record_vote(value, voter)
        # a vote relays the proposal: vote on it if it is acceptable
        return self._consider_vote(view, value)

    def _record_vote(self, value: SyncValue, voter: AuthorId) -> None:
        voters = self.votes.setdefault(value.id, set())
        voters.add(voter)
        if len(voters) >= self.cc_threshold:
            cc = SyncCC(value, frozenset(voters))
            if self.depth(value) > self.depth(self.highest_cc.value):
                self.highest_cc = cc

    def _on_blames(self, view: int, voter: AuthorId) -> list:
        self.blames.setdefault(view, set()).add(voter)
        if view == self.view and view not in self.quit_views:
            if len(self.blames[view]) >= self.f + 1:
                self.quit_views.add(view)
                blame_out = [
                    Outbound("blame", view, (view, a), BROADCAST,
                             exclude_self=True)
                    for a in sorted(self.blames[view])
                ]
                return blame_out + [TimerRequest(QUIT_WAIT, ("enter", view + 1))]
        return []

    def _on_status(self, view: int, cc: SyncCC, blame_count: int) -> list:
        if self.depth(cc.value) > self.depth(self.highest_cc.value):
            self.values.setdefault(cc.value.id, cc.value)
            self.highest_cc = cc
        out: list = []
        if blame_count >= self.f + 1 and view > self.view:
            # the sender's f+1 blames justify entering the view directly
            self.view = view
            out.append(TimerRequest(BLAME_AFTER, ("no-proposal", view)))
        if self.leader_of.get(self.view) == self.author:
            out.extend(self._propose())
        return out

    def _on_timer(self, payload) -> list:
        tag = payload[0]
        if tag == "no-proposal":
            view = payload[1]
            if view == self.view and view not in self.proposal_seen \
                    and view not in self.quit_views:
                blame = (view, self.author)
                self.blames.setdefault(view, set()).add(self.author)
                return [Outbound("blame", view, blame, BROADCAST,
                                 exclude_self=True)]
            return []
        if tag == "enter":
            view = payload[1]
            if self.view >= view:
                return []
            self.view = view
            out: list = [TimerRequest(BLAME_AFTER, ("no-proposal", view))]
            if self.leader_of.get(view) == self.author:
                out.extend(self._propose())
            else:
                prior_blames = len(self.blames.get(view - 1, ()))
                status = (view, self.highest_cc, prior_blames)
                out.append(Outbound("status", view, status,
                                    self.leader_of.get(view, BROADCAST)))
            return out
        if tag == "commit":
            _, view, value_id = payload
            if (
                view == self.view
                and view not in self.quit_views
                and view not in self.equivocated_views
                and not self.blames.get(view)
                and value_id not in self.commits
            ):
                self.commits.append(value_id)
            return []
        raise ValueError(f"unexpected timer payload {payload!r}")
