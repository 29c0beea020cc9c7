"""Virtual clock and the step scheduler that drives simulated threads.

A simulated thread is a generator.  Each ``next()`` performs one atomic step
against shared state and yields a directive telling the scheduler when the
thread may take its next step:

* ``None``          -- runnable again immediately;
* ``Sleep(ns)``     -- runnable, but its clock moves forward by ``ns``;
* ``WaitFor(pred)`` -- disabled until ``pred()`` holds (a spin on peer state).

Which runnable thread goes next is decided by a chooser.  ``MinTime`` gives a
conservative discrete-event simulation (benchmarks); ``Dfs`` enumerates every
choice (exploration); ``Seeded`` picks uniformly at random.
"""
from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Callable, Generator, Iterable


class Deadlock(RuntimeError):
    pass


class StepLimit(RuntimeError):
    pass


@dataclass(slots=True)
class Sleep:
    ns: int


@dataclass(slots=True)
class WaitFor:
    pred: Callable[[], bool]
    label: str = ""


class Clock:
    """Per-thread virtual clocks plus a global frontier.

    In strict mode (exploration) every step starts ``tick`` after the previous
    one regardless of thread, so step ``k`` starts at ``k * tick``.  Otherwise a
    step starts at the thread's own clock, which the min-time chooser keeps in
    global order.
    """

    def __init__(self, n_threads: int, tick_ns: int = 10, strict: bool = False,
                 skew_ns: Iterable[int] = ()):
        self.tick = tick_ns
        self.strict = strict
        self.local = [0] * n_threads
        self.frontier = -tick_ns if strict else 0
        self.steps = 0
        skew = list(skew_ns)
        self.skew = skew + [0] * (n_threads - len(skew))
        self._skewed = any(self.skew)
        self._last_ts = -1
        self._last_thread_ts = [-1] * n_threads

    def start_step(self, tid: int) -> int:
        if self.strict:
            s = max(self.local[tid], self.frontier + self.tick)
        else:
            s = max(self.local[tid], self.frontier)
        self.local[tid] = s
        if s > self.frontier:
            self.frontier = s
        self.steps += 1
        return s

    def end_step(self, tid: int) -> None:
        self.local[tid] += self.tick

    def advance(self, tid: int, ns: int) -> None:
        self.local[tid] += ns

    def time(self, tid: int) -> int:
        return self.local[tid]

    def now(self, tid: int) -> int:
        """Timestamp for ``tid``: strictly increasing per thread.

        Without skew, timestamps are also unique and ordered by when they were
        taken across all threads (perfectly synchronized counters).
        """
        t = self.local[tid] + self.skew[tid]
        if self._skewed:
            ts = max(t, self._last_thread_ts[tid] + 1)
        else:
            ts = max(t, self._last_ts + 1)
            self._last_ts = ts
        self._last_thread_ts[tid] = ts
        if ts - self.skew[tid] > self.local[tid]:
            self.local[tid] = ts - self.skew[tid]
        return ts


class MinTime:
    """Run the runnable thread with the smallest clock; ties broken by seed."""

    def __init__(self, seed: int = 0):
        self.rng = random.Random(seed)

    def choose(self, enabled: list[int], clock: Clock) -> int:
        best = min(clock.local[t] for t in enabled)
        ties = [t for t in enabled if clock.local[t] == best]
        return ties[0] if len(ties) == 1 else self.rng.choice(ties)


class Seeded:
    def __init__(self, seed: int = 0):
        self.rng = random.Random(seed)

    def choose(self, enabled: list[int], clock: Clock) -> int:
        return self.rng.choice(enabled)


class Dfs:
    """Follows a recorded prefix of choices, then always takes the first option.

    ``trail`` records ``(chosen_index, n_options)`` for every real choice point
    so the explorer can backtrack.
    """

    def __init__(self, prefix: list[int] | None = None):
        self.prefix = list(prefix or [])
        self.trail: list[tuple[int, int]] = []

    def choose(self, enabled: list[int], clock: Clock) -> int:
        if len(enabled) == 1:
            return enabled[0]
        depth = len(self.trail)
        idx = self.prefix[depth] if depth < len(self.prefix) else 0
        self.trail.append((idx, len(enabled)))
        return enabled[idx]


class Scheduler:
    def __init__(self, clock: Clock, chooser, *, inline_sleep: bool = False,
                 hooks: Iterable[Callable[[int], None]] = (), max_steps: int = 50_000_000):
        self.clock = clock
        self.chooser = chooser
        self.inline_sleep = inline_sleep
        self.hooks = list(hooks)
        self.max_steps = max_steps
        self.threads: dict[int, Generator] = {}
        self.blocked: dict[int, WaitFor] = {}
        self.current: int | None = None

    def spawn(self, tid: int, gen: Generator) -> None:
        self.threads[tid] = gen

    def _runnable(self) -> list[int]:
        out = []
        for tid in sorted(self.threads):
            w = self.blocked.get(tid)
            if w is None:
                out.append(tid)
            elif w.pred():
                del self.blocked[tid]
                out.append(tid)
        return out

    def run(self) -> None:
        clock = self.clock
        while self.threads:
            enabled = self._runnable()
            if not enabled:
                labels = {t: w.label for t, w in self.blocked.items()}
                raise Deadlock(f"all threads blocked: {labels}")
            if clock.steps >= self.max_steps:
                raise StepLimit(f"exceeded {self.max_steps} steps")
            tid = enabled[0] if len(enabled) == 1 and not isinstance(self.chooser, Dfs) \
                else self.chooser.choose(enabled, clock)
            self._step(tid)

    def _step(self, tid: int) -> None:
        clock = self.clock
        gen = self.threads[tid]
        self.current = tid
        while True:
            s = clock.start_step(tid)
            for h in self.hooks:
                h(clock.frontier)
            try:
                directive = next(gen)
            except StopIteration:
                del self.threads[tid]
                self.current = None
                return
            if isinstance(directive, Sleep):
                clock.advance(tid, directive.ns)
                if self.inline_sleep:
                    continue
            elif isinstance(directive, WaitFor):
                self.blocked[tid] = directive
            clock.end_step(tid)
            break
        self.current = None
