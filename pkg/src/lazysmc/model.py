"""Model-authoring contracts: weight-event streams and pausable executions.

A model execution emits a stream of :class:`LogWeight` increments separated
by :class:`Checkpoint` markers and terminated by exactly one :class:`Done`.
Checkpoints are the resampling-aligned pause points: an execution can be
cloned (deep copy) at any checkpoint, and clones advanced with independent
random streams diverge while sharing a bit-identical realized prefix.

Executions are explicit steppers rather than native coroutines: the program
object carries all state between segments, which is what makes the deep-copy
clone trivial. State-space models get a dedicated driver that runs the
parameter block once, then per time step the transition (initial at t=1) and
observation blocks, emitting one checkpoint per step so every particle's
k-th checkpoint is time step k. Generic programs place checkpoints
themselves; by default one is emitted after every weight increment.

Three operator semantics from the modeling surface:

* ``ctx.tilde(slot, dist)`` -- associate a random slot with a distribution;
  a clamped slot is observed (weight emitted), an empty one stays latent.
* ``ctx.draw(dist)`` -- simulate eagerly and return the value; no node.
* ``ctx.factor(value, dist)`` -- weight by the log density of a known value.
"""

from __future__ import annotations

import copy
from collections import deque

import numpy as np

from .graph import GraphArena, GraphError, NodeRef

__all__ = [
    "LogWeight",
    "Checkpoint",
    "Done",
    "Random",
    "ObservationSchedule",
    "ExecutionContext",
    "Model",
    "StateSpaceModel",
    "ModelExecution",
    "SSMExecution",
    "run_ssm",
]


class LogWeight:
    __slots__ = ("value",)

    def __init__(self, value: float):
        self.value = value

    def __repr__(self):
        return f"LogWeight({self.value})"

    def __eq__(self, other):
        return isinstance(other, LogWeight) and other.value == self.value


class Checkpoint:
    __slots__ = ()

    def __repr__(self):
        return "Checkpoint()"

    def __eq__(self, other):
        return isinstance(other, Checkpoint)


class Done:
    __slots__ = ()

    def __repr__(self):
        return "Done()"

    def __eq__(self, other):
        return isinstance(other, Done)


_UNSET = object()


class Random:
    """A slot for a random value, clampable before execution.

    Clamping turns the tilde statement that touches the slot into an
    observation; otherwise the slot is bound to a latent graph node.
    """

    __slots__ = ("ref", "_given")

    def __init__(self, given=_UNSET):
        self.ref: NodeRef | None = None
        self._given = given

    def clamp(self, value) -> "Random":
        self._given = value
        return self

    @property
    def is_clamped(self) -> bool:
        return self._given is not _UNSET

    @property
    def given(self):
        if self._given is _UNSET:
            raise ValueError("slot has no clamped value")
        return self._given

    def value(self):
        """The slot's value: the clamp if present, else the realized node."""
        if self.is_clamped:
            return self._given
        if self.ref is None:
            raise ValueError("slot not yet bound by a tilde statement")
        return self.ref.value()


class ObservationSchedule:
    """Per-time-step given values for observed variables; absent = latent.

    Accepts a dict keyed by time step (1-based) or a sequence covering steps
    1..T. Schedules are immutable and shared across particle clones.
    """

    def __init__(self, values=None):
        if values is None:
            self._values = {}
        elif isinstance(values, dict):
            self._values = dict(values)
        else:
            self._values = {t + 1: v for t, v in enumerate(values)}

    def get(self, t: int):
        return self._values.get(t)

    def __len__(self):
        return len(self._values)

    def __deepcopy__(self, memo):
        return self


_CHECKPOINT = Checkpoint()
_ATOMIC = (float, int, bool, str, type(None))

# the internal event queue stores bare floats for weight increments and this
# singleton for checkpoints; next_event() wraps them into the public types


class ExecutionContext:
    """Operations available to model code during one execution."""

    __slots__ = ("arena", "_queue", "_auto_checkpoint")

    def __init__(self, arena: GraphArena, queue: deque, auto_checkpoint: bool):
        self.arena = arena
        self._queue = queue
        self._auto_checkpoint = auto_checkpoint

    @property
    def rng(self) -> np.random.Generator:
        return self.arena.rng

    def assume(self, dist_expr) -> NodeRef:
        return self.arena.assume(dist_expr)

    def tilde(self, slot: Random | None, dist_expr) -> NodeRef:
        ref = self.arena.assume(dist_expr)
        if slot is not None:
            slot.ref = ref
            if slot.is_clamped:
                self.add_log_weight(ref.observe(slot.given))
        return ref

    def observe(self, target, value) -> float:
        """Observe a node (or fresh distribution) at ``value``; emits the weight."""
        if not isinstance(target, NodeRef):
            target = self.arena.assume(target)
        log_w = target.observe(value)
        self.add_log_weight(log_w)
        return log_w

    def draw(self, dist):
        """Eager simulate-and-assign; no graph node is created."""
        return dist.sample(self.arena.rng)

    def factor(self, value, dist) -> float:
        """Weight by the log density of an already-known value."""
        log_w = dist.log_pdf(value)
        self.add_log_weight(log_w)
        return log_w

    def add_log_weight(self, log_w: float) -> None:
        self._queue.append(float(log_w))
        if self._auto_checkpoint:
            self._queue.append(_CHECKPOINT)

    def checkpoint(self) -> None:
        self._queue.append(_CHECKPOINT)

    def value(self, ref: NodeRef):
        return ref.value()


class Model:
    """Generic stepwise program: override :meth:`step`, optionally :meth:`start`.

    ``step(ctx, t)`` runs one segment and returns False when the program has
    finished. With ``auto_checkpoint`` (the default) every weight increment
    is followed by a checkpoint; set it False and call ``ctx.checkpoint()``
    to control alignment manually.
    """

    auto_checkpoint = True

    def start(self, ctx: ExecutionContext) -> None:
        pass

    def step(self, ctx: ExecutionContext, t: int) -> bool:
        raise NotImplementedError

    def extract(self, ctx: ExecutionContext):
        """Posterior payload for this execution; realized lazily on demand."""
        return None


class StateSpaceModel:
    """Four-part contract: parameter, initial, transition, observation.

    The transition at time t may read only the previous state and the
    parameters; the observation at time t only the current state and the
    parameters. The driver enforces the call pattern and checkpointing.
    """

    auto_checkpoint = False  # the SSM driver owns checkpoint placement

    def parameter(self, ctx: ExecutionContext):
        return None

    def initial(self, ctx: ExecutionContext, params):
        raise NotImplementedError

    def transition(self, ctx: ExecutionContext, state, params, t: int):
        raise NotImplementedError

    def observation(self, ctx: ExecutionContext, state, params, t: int, given) -> None:
        raise NotImplementedError

    def extract(self, ctx: ExecutionContext):
        return None


class ModelExecution:
    """A pausable, clonable run of a generic :class:`Model`."""

    def __init__(self, program: Model, rng: np.random.Generator):
        self.program = program
        self.arena = GraphArena(rng)
        self._queue: deque = deque()
        self.ctx = ExecutionContext(self.arena, self._queue,
                                    auto_checkpoint=program.auto_checkpoint)
        self._t = 0
        self._finished = False
        self._done_emitted = False

    # -- stream ---------------------------------------------------------

    def next_event(self):
        while not self._queue:
            if self._finished:
                if self._done_emitted:
                    raise GraphError("execution already finished")
                self._done_emitted = True
                return Done()
            self._advance_segment()
        raw = self._queue.popleft()
        return LogWeight(raw) if type(raw) is float else raw

    def advance_to_checkpoint(self) -> tuple[float, bool]:
        """Accumulate weight up to the next checkpoint; (increment, done).

        ``done`` is True when the stream is exhausted, including the case of
        a final checkpoint followed directly by the end of the program.
        """
        acc = 0.0
        queue = self._queue
        while True:
            if not queue:
                if self._finished:
                    if self._done_emitted:
                        raise GraphError("execution already finished")
                    self._done_emitted = True
                    return acc, True
                self._advance_segment()
                continue
            raw = queue.popleft()
            if type(raw) is float:
                acc += raw
            else:
                if not queue and self._finished:
                    self._done_emitted = True
                    return acc, True
                return acc, False
        # unreachable

    def run_to_done(self) -> float:
        """Total log weight of the whole stream."""
        total = 0.0
        while True:
            inc, done = self.advance_to_checkpoint()
            total += inc
            if done:
                return total

    # -- stepping -------------------------------------------------------

    def _advance_segment(self) -> None:
        if self._t == 0:
            self.program.start(self.ctx)
        self._t += 1
        more = self.program.step(self.ctx, self._t)
        if not more:
            self._finished = True

    # -- lifecycle --------------------------------------------------------

    @property
    def time(self) -> int:
        return self._t

    @property
    def finished(self) -> bool:
        return self._finished

    @property
    def rng(self) -> np.random.Generator:
        return self.arena.rng

    def set_rng(self, rng: np.random.Generator) -> None:
        self.arena.rng = rng

    def clone(self, rng: np.random.Generator | None = None) -> "ModelExecution":
        memo = {}
        if rng is not None:
            # the clone gets this stream instead of a copy of the current one
            memo[id(self.arena.rng)] = rng
        return self.__deepcopy__(memo)

    def _copy_base(self, dup: "ModelExecution", memo) -> None:
        program = self.program
        dup.program = (program.__deepcopy__(memo) if hasattr(program, "__deepcopy__")
                       else copy.deepcopy(program, memo))
        # the program may already have pulled the arena into the memo via its
        # node handles; a second copy would strand those handles
        existing = memo.get(id(self.arena))
        dup.arena = existing if existing is not None else self.arena.__deepcopy__(memo)
        dup._queue = deque(self._queue)
        dup.ctx = ExecutionContext(dup.arena, dup._queue, self.ctx._auto_checkpoint)
        dup._t = self._t
        dup._finished = self._finished
        dup._done_emitted = self._done_emitted

    def __deepcopy__(self, memo):
        dup = object.__new__(type(self))
        memo[id(self)] = dup
        self._copy_base(dup, memo)
        return dup

    def extract(self):
        return self.program.extract(self.ctx)


class SSMExecution(ModelExecution):
    """Driver for :class:`StateSpaceModel` programs.

    Segment 1 runs the parameter block, the initial block, and the first
    observation block; segment t>=2 runs transition then observation. One
    checkpoint is emitted at the end of every segment, so checkpoint k is
    time step k for every particle.
    """

    def __init__(self, program: StateSpaceModel, schedule: ObservationSchedule,
                 T: int, rng: np.random.Generator):
        if T < 1:
            raise ValueError(f"need T >= 1, got {T}")
        super().__init__(program, rng)
        self.schedule = schedule if schedule is not None else ObservationSchedule()
        self.T = T
        self.params = None
        self.state = None

    def _advance_segment(self) -> None:
        t = self._t + 1
        program, ctx = self.program, self.ctx
        if t == 1:
            self.params = program.parameter(ctx)
            self.state = program.initial(ctx, self.params)
        else:
            self.state = program.transition(ctx, self.state, self.params, t)
        program.observation(ctx, self.state, self.params, t, self.schedule.get(t))
        self._queue.append(_CHECKPOINT)
        self._t = t
        if t >= self.T:
            self._finished = True

    def __deepcopy__(self, memo):
        dup = object.__new__(type(self))
        memo[id(self)] = dup
        self._copy_base(dup, memo)
        dup.schedule = self.schedule
        dup.T = self.T
        dup.params = (self.params if type(self.params) in _ATOMIC
                      else copy.deepcopy(self.params, memo))
        dup.state = (self.state if type(self.state) in _ATOMIC
                     else copy.deepcopy(self.state, memo))
        return dup


def run_ssm(program: StateSpaceModel, schedule: ObservationSchedule | None,
            T: int, rng: np.random.Generator) -> SSMExecution:
    """Build the checkpointed execution of a state-space model."""
    return SSMExecution(program, schedule, T, rng)
