"""Governance-hook event bus.

Two delivery modes share one subscription model:

* synchronous (default): events are delivered in the publisher's thread, in
  registration order, FIFO across nested publishes. Deterministic; used by the
  simulator.
* threaded: every subscription owns a bounded queue drained by its own worker,
  so a slow handler never blocks the publisher. On overflow the oldest queued
  event is dropped and ``x.subscriberOverflow`` is published.
"""
from __future__ import annotations

import fnmatch
import itertools
import logging
import threading
from collections import deque
from datetime import datetime
from typing import Callable

from .events import BUILTIN_EXTENSIONS, EXTENSION_PREFIX, HookCategory, HookEvent, InvalidEventName, category_of

log = logging.getLogger(__name__)

Handler = Callable[[HookEvent], None]


class Subscription:
    _ids = itertools.count()

    def __init__(self, bus: "EventBus", handler: Handler, category, pattern, maxlen: int):
        self.id = next(self._ids)
        self.bus = bus
        self.handler = handler
        self.category = HookCategory(category) if category is not None else None
        self.pattern = pattern
        self.maxlen = maxlen
        self.dropped = 0
        self.delivered = 0
        self.active = True
        self._queue: deque[HookEvent] = deque()
        self._cv = threading.Condition()
        self._busy = False
        self._worker: threading.Thread | None = None

    def matches(self, event: HookEvent) -> bool:
        if self.category is not None and event.category is not self.category:
            return False
        return self.pattern is None or fnmatch.fnmatchcase(event.name, self.pattern)

    def cancel(self) -> None:
        self.active = False
        self.bus._remove(self)
        with self._cv:
            self._cv.notify_all()

    def _call(self, event: HookEvent) -> None:
        try:
            self.handler(event)
        except Exception:  # handlers must not break the publisher
            log.exception("hook handler %r failed on %s", self.handler, event.name)
        self.delivered += 1

    # threaded mode

    def _offer(self, event: HookEvent) -> HookEvent | None:
        """Queue ``event``; returns the dropped event on overflow."""
        with self._cv:
            dropped = None
            if len(self._queue) >= self.maxlen:
                dropped = self._queue.popleft()
                self.dropped += 1
            self._queue.append(event)
            self._cv.notify_all()
            return dropped

    def _run(self) -> None:
        while True:
            with self._cv:
                while self.active and not self._queue:
                    self._cv.wait()
                if not self._queue:
                    return
                event = self._queue.popleft()
                self._busy = True
            self._call(event)
            with self._cv:
                self._busy = False
                self._cv.notify_all()

    def _idle(self, timeout: float | None) -> bool:
        with self._cv:
            return self._cv.wait_for(lambda: not self._queue and not self._busy, timeout)


class EventBus:
    def __init__(self, *, threaded: bool = False, queue_size: int = 1024):
        self.threaded = threaded
        self.queue_size = queue_size
        self.extensions: dict[str, HookCategory] = dict(BUILTIN_EXTENSIONS)
        self._subs: list[Subscription] = []
        self._lock = threading.RLock()
        self._pending: deque[tuple[HookEvent, Subscription | None]] = deque()
        self._delivering = False
        self.published: list[HookEvent] = []

    def register_extension(self, name: str, category: HookCategory | str) -> None:
        if not name.startswith(EXTENSION_PREFIX) or len(name) <= len(EXTENSION_PREFIX):
            raise InvalidEventName(f"extension names must start with {EXTENSION_PREFIX!r}: {name!r}")
        self.extensions[name] = HookCategory(category)

    def event(self, name: str, timestamp: datetime, cycle_id: str | None = None, payload=None) -> HookEvent:
        return HookEvent.make(name, timestamp, cycle_id, payload, self.extensions)

    def subscribe(
        self,
        handler: Handler,
        category: HookCategory | str | None = None,
        name: str | None = None,
        *,
        queue_size: int | None = None,
    ) -> Subscription:
        """Register ``handler`` for events matching a category and/or an fnmatch name pattern."""
        sub = Subscription(self, handler, category, name, queue_size or self.queue_size)
        with self._lock:
            self._subs.append(sub)
        if self.threaded:
            sub._worker = threading.Thread(target=sub._run, name=f"hook-sub-{sub.id}", daemon=True)
            sub._worker.start()
        return sub

    def _remove(self, sub: Subscription) -> None:
        with self._lock:
            if sub in self._subs:
                self._subs.remove(sub)

    def publish(self, event: HookEvent) -> int:
        """Deliver (or enqueue) ``event`` to every matching subscriber; returns the match count."""
        if category_of(event.name, self.extensions) is not event.category:
            raise InvalidEventName(f"{event.name} does not belong to category {event.category.value}")
        return self._publish(event, exclude=None)

    def emit(self, name: str, timestamp: datetime, cycle_id: str | None = None, payload=None) -> HookEvent:
        event = self.event(name, timestamp, cycle_id, payload)
        self.publish(event)
        return event

    def _publish(self, event: HookEvent, exclude: Subscription | None) -> int:
        with self._lock:
            self.published.append(event)
            targets = [s for s in self._subs if s.active and s is not exclude and s.matches(event)]
        if self.threaded:
            for sub in targets:
                dropped = sub._offer(event)
                if dropped is not None:
                    notice = HookEvent.make(
                        "x.subscriberOverflow",
                        event.timestamp,
                        event.cycle_id,
                        {"subscription": sub.id, "dropped": dropped.name},
                        self.extensions,
                    )
                    self._publish(notice, exclude=sub)
            return len(targets)
        with self._lock:
            self._pending.append((event, exclude))
            if self._delivering:
                return len(targets)
            self._delivering = True
        try:
            while True:
                with self._lock:
                    if not self._pending:
                        self._delivering = False
                        break
                    ev, excl = self._pending.popleft()
                    subs = [s for s in self._subs if s.active and s is not excl and s.matches(ev)]
                for sub in subs:
                    sub._call(ev)
        except BaseException:
            with self._lock:
                self._delivering = False
            raise
        return len(targets)

    def flush(self, timeout: float | None = 5.0) -> bool:
        """Wait until every threaded subscription has drained its queue."""
        if not self.threaded:
            return True
        with self._lock:
            subs = list(self._subs)
        return all(s._idle(timeout) for s in subs)

    def close(self) -> None:
        with self._lock:
            subs = list(self._subs)
        for s in subs:
            s.cancel()
