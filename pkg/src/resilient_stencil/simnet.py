"""Deterministic simulation of message-passing processes with crash faults.

Processes are plain generators. A process communicates by yielding one of the
request objects defined here (:class:`SendRecvReplace`, :class:`AllreduceSum`,
:class:`Revoke`, :class:`Shrink`); the scheduler in :meth:`World.run` resumes it
with the result, or throws a :class:`CommError` into it.

Faults are fail-stop and only happen at iteration boundaries, through
:meth:`World.advance_iteration`. Error semantics follow ULFM: operations on a
communicator that contains a failed peer raise :class:`ProcFailedError`,
operations on a revoked communicator raise :class:`RevokedError`, and
:class:`Shrink` builds a fresh communicator from the live members, keeping
their relative order.

Ranks passed to requests are *world* ranks.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Generator, Iterable, Mapping

import numpy as np

__all__ = [
    "AllreduceSum",
    "CommError",
    "CommRecord",
    "DeadlockError",
    "FaultEvent",
    "InvalidConfigError",
    "ProcFailedError",
    "Revoke",
    "RevokedError",
    "SendRecvReplace",
    "Shrink",
    "World",
    "create_world",
]

WORLD_COMM = 0


class InvalidConfigError(ValueError):
    pass


class DeadlockError(RuntimeError):
    """Raised when every unfinished process is blocked on an unmatched call."""


class CommError(Exception):
    pass


class ProcFailedError(CommError):
    def __init__(self, peer: int):
        super().__init__(f"process {peer} failed")
        self.peer = peer

    def __eq__(self, other):
        return isinstance(other, ProcFailedError) and other.peer == self.peer

    def __hash__(self):
        return hash(("ProcFailed", self.peer))


class RevokedError(CommError):
    def __init__(self, comm: int | None = None):
        super().__init__(f"communicator {comm} revoked")
        self.comm = comm

    def __eq__(self, other):
        return isinstance(other, RevokedError)

    def __hash__(self):
        return hash("Revoked")


@dataclass(frozen=True)
class FaultEvent:
    rank: int
    at_iteration: int

    @classmethod
    def parse(cls, text: str) -> "FaultEvent":
        """Parse ``"rank@iteration"``."""
        try:
            rank, at = text.strip().split("@")
            return cls(int(rank), int(at))
        except ValueError as exc:
            raise InvalidConfigError(f"bad fault spec {text!r}, expected rank@iter") from exc


@dataclass
class CommRecord:
    members: tuple[int, ...]
    revoked: bool = False

    def rank_of(self, world_rank: int) -> int:
        return self.members.index(world_rank)

    @property
    def size(self) -> int:
        return len(self.members)


# -- requests yielded by process programs ------------------------------------


@dataclass(frozen=True)
class SendRecvReplace:
    """Pairwise exchange with ``peer``; source and destination are the same rank."""

    comm: int
    peer: int
    buf: Any


@dataclass(frozen=True)
class AllreduceSum:
    comm: int
    value: float


@dataclass(frozen=True)
class Revoke:
    comm: int


@dataclass(frozen=True)
class Shrink:
    comm: int


Program = Generator[Any, Any, Any]


@dataclass
class _Proc:
    rank: int
    gen: Program
    send: Any = None
    throw: BaseException | None = None
    runnable: bool = True
    done: bool = False
    result: Any = None
    waiting_on: Any = None


@dataclass
class World:
    """All simulated processes, their liveness and their communicators.

    ``failed`` maps a world rank to the iteration at which it failed; ranks not
    in it are live.
    """

    n_ranks: int
    fault_plan: tuple[FaultEvent, ...] = ()
    rng_seed: int = 0
    iteration: int = 0
    failed: dict[int, int] = field(default_factory=dict)
    comms: dict[int, CommRecord] = field(default_factory=dict)
    record_trace: bool = False
    trace: list[tuple] = field(default_factory=list)

    def __post_init__(self):
        if self.n_ranks < 1:
            raise InvalidConfigError("n_ranks must be >= 1")
        for ev in self.fault_plan:
            if not 0 <= ev.rank < self.n_ranks:
                raise InvalidConfigError(f"fault names rank {ev.rank} outside 0..{self.n_ranks - 1}")
            if ev.at_iteration < 0:
                raise InvalidConfigError(f"fault iteration {ev.at_iteration} is negative")
        if not self.comms:
            self.comms[WORLD_COMM] = CommRecord(tuple(range(self.n_ranks)))
        self._next_comm = max(self.comms) + 1
        self.rng = np.random.default_rng(self.rng_seed)
        # per-comm matching state
        self._pair_seq: dict[tuple[int, int, int], int] = defaultdict(int)
        self._p2p_pending: dict[tuple[int, int, int, int], _Proc] = {}
        self._coll_seq: dict[tuple[int, int], int] = defaultdict(int)
        self._coll_slots: dict[tuple[int, int], dict[int, tuple[_Proc, float]]] = {}
        self._shrink_slots: dict[int, dict[int, _Proc]] = {}
        self._shrink_result: dict[int, int] = {}

    # -- liveness ------------------------------------------------------------

    def is_failed(self, rank: int) -> bool:
        return rank in self.failed

    def live_ranks(self) -> list[int]:
        return [r for r in range(self.n_ranks) if r not in self.failed]

    def apply_faults(self) -> list[int]:
        """Fail every rank whose event is due at the current iteration."""
        newly = sorted(
            {ev.rank for ev in self.fault_plan if ev.at_iteration == self.iteration and ev.rank not in self.failed}
        )
        for r in newly:
            self.failed[r] = self.iteration
        if newly and self.record_trace:
            self.trace.append((self.iteration, "fail", tuple(newly)))
        return newly

    def advance_iteration(self) -> list[int]:
        """Move the clock forward by one and return the ranks that just failed."""
        self.iteration += 1
        return self.apply_faults()

    def kill(self, rank: int) -> None:
        """Fail ``rank`` now, outside the fault plan."""
        if not 0 <= rank < self.n_ranks:
            raise InvalidConfigError(f"rank {rank} out of range")
        self.failed.setdefault(rank, self.iteration)

    # -- communicator management ---------------------------------------------

    def comm(self, comm_id: int) -> CommRecord:
        return self.comms[comm_id]

    def revoke(self, comm_id: int) -> None:
        rec = self.comms[comm_id]
        if rec.revoked:
            return
        rec.revoked = True
        if self.record_trace:
            self.trace.append((self.iteration, "revoke", comm_id))
        # pending operations on a revoked communicator are interrupted
        err = RevokedError(comm_id)
        for key in [k for k in self._p2p_pending if k[0] == comm_id]:
            self._wake(self._p2p_pending.pop(key), throw=err)
        for key in [k for k in self._coll_slots if k[0] == comm_id]:
            for proc, _ in self._coll_slots.pop(key).values():
                self._wake(proc, throw=err)

    def shrink(self, comm_id: int) -> int:
        """Create a communicator holding the live members of ``comm_id`` in order."""
        rec = self.comms[comm_id]
        members = tuple(r for r in rec.members if r not in self.failed)
        new_id = self._next_comm
        self._next_comm += 1
        self.comms[new_id] = CommRecord(members)
        if self.record_trace:
            self.trace.append((self.iteration, "shrink", comm_id, new_id, members))
        return new_id

    # -- scheduler -------------------------------------------------------------

    def run(self, programs: Mapping[int, Program]) -> dict[int, Any]:
        """Drive ``programs`` (world rank -> generator) to completion.

        Processes step one request at a time in ascending rank order, round
        robin, until all have finished. Returns each program's return value.
        """
        procs = []
        for rank in sorted(programs):
            if self.is_failed(rank):
                raise ValueError(f"cannot run a program on failed rank {rank}")
            procs.append(_Proc(rank, programs[rank]))

        progress = True
        while progress:
            progress = False
            for proc in procs:
                if proc.runnable and not proc.done:
                    self._step(proc)
                    progress = True

        stuck = [p for p in procs if not p.done]
        if stuck:
            detail = ", ".join(f"{p.rank}:{type(p.waiting_on).__name__}" for p in stuck)
            self._clear_pending()
            raise DeadlockError(f"iteration {self.iteration}: blocked processes {detail}")
        return {p.rank: p.result for p in procs}

    def _clear_pending(self):
        self._p2p_pending.clear()
        self._coll_slots.clear()
        self._shrink_slots.clear()

    def _wake(self, proc: _Proc, value: Any = None, throw: BaseException | None = None) -> None:
        proc.send, proc.throw = value, throw
        proc.runnable = True
        proc.waiting_on = None

    def _step(self, proc: _Proc) -> None:
        send, throw = proc.send, proc.throw
        proc.send = proc.throw = None
        try:
            if throw is not None:
                req = proc.gen.throw(throw)
            else:
                req = proc.gen.send(send)
        except StopIteration as stop:
            proc.done = True
            proc.result = stop.value
            return
        self._dispatch(proc, req)

    def _dispatch(self, proc: _Proc, req: Any) -> None:
        if isinstance(req, SendRecvReplace):
            self._sendrecv(proc, req)
        elif isinstance(req, AllreduceSum):
            self._allreduce(proc, req)
        elif isinstance(req, Revoke):
            self.revoke(req.comm)
            self._wake(proc, None)
        elif isinstance(req, Shrink):
            self._shrink(proc, req)
        else:
            raise TypeError(f"rank {proc.rank} yielded unsupported request {req!r}")

    def _block(self, proc: _Proc, req: Any) -> None:
        proc.runnable = False
        proc.waiting_on = req

    def _check_member(self, rec: CommRecord, rank: int, comm_id: int) -> None:
        if rank not in rec.members:
            raise ValueError(f"rank {rank} is not a member of communicator {comm_id}")

    def _sendrecv(self, proc: _Proc, req: SendRecvReplace) -> None:
        rec = self.comms[req.comm]
        self._check_member(rec, proc.rank, req.comm)
        self._check_member(rec, req.peer, req.comm)
        if rec.revoked:
            self._wake(proc, throw=RevokedError(req.comm))
            return
        if self.is_failed(req.peer):
            self._wake(proc, throw=ProcFailedError(req.peer))
            return
        if req.peer == proc.rank:
            self._wake(proc, req.buf)
            return
        seq_key = (req.comm, proc.rank, req.peer)
        seq = self._pair_seq[seq_key]
        self._pair_seq[seq_key] = seq + 1
        partner = self._p2p_pending.pop((req.comm, req.peer, proc.rank, seq), None)
        if partner is None:
            self._p2p_pending[(req.comm, proc.rank, req.peer, seq)] = proc
            self._block(proc, req)
            return
        other_buf = partner.waiting_on.buf
        if self.record_trace:
            self.trace.append((self.iteration, "sendrecv", req.comm, partner.rank, proc.rank, seq))
        self._wake(partner, req.buf)
        self._wake(proc, other_buf)

    def _allreduce(self, proc: _Proc, req: AllreduceSum) -> None:
        rec = self.comms[req.comm]
        self._check_member(rec, proc.rank, req.comm)
        if rec.revoked:
            self._wake(proc, throw=RevokedError(req.comm))
            return
        dead = [r for r in rec.members if self.is_failed(r)]
        if dead:
            self._wake(proc, throw=ProcFailedError(dead[0]))
            return
        seq = self._coll_seq[(req.comm, proc.rank)]
        self._coll_seq[(req.comm, proc.rank)] = seq + 1
        slot = self._coll_slots.setdefault((req.comm, seq), {})
        slot[proc.rank] = (proc, req.value)
        self._block(proc, req)
        if len(slot) < rec.size:
            return
        del self._coll_slots[(req.comm, seq)]
        total = 0.0
        for r in rec.members:
            total += slot[r][1]
        if self.record_trace:
            self.trace.append((self.iteration, "allreduce", req.comm, seq, total))
        for r in rec.members:
            self._wake(slot[r][0], total)

    def _shrink(self, proc: _Proc, req: Shrink) -> None:
        rec = self.comms[req.comm]
        self._check_member(rec, proc.rank, req.comm)
        if req.comm in self._shrink_result:
            # every live member already agreed on the result
            self._wake(proc, self._shrink_result[req.comm])
            return
        slot = self._shrink_slots.setdefault(req.comm, {})
        slot[proc.rank] = proc
        self._block(proc, req)
        live = [r for r in rec.members if not self.is_failed(r)]
        if any(r not in slot for r in live):
            return
        del self._shrink_slots[req.comm]
        new_id = self.shrink(req.comm)
        self._shrink_result[req.comm] = new_id
        for r in live:
            self._wake(slot[r], new_id)


def create_world(n_ranks: int, fault_plan: Iterable[FaultEvent] = (), seed: int = 0, **kwargs) -> World:
    return World(n_ranks, tuple(fault_plan), seed, **kwargs)
