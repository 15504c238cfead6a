import asyncio
import inspect
import logging
from collections import deque
from typing import Any, Awaitable, Callable, Deque, Dict, List, Mapping, Optional, Tuple, Union

import attr

from src import wire_protocol as wire
from src.articulation_model import Constraint, ModelPath, Operation, Placement, as_path
from src.errors import (ArticulationError, BadMessage, Disconnected, DuplicateName, DuplicateTag, MissingLimits,
                        OperationContractError, StoreError, UnknownOperation, UnknownPath, UnknownTag, VersionMismatch)
from src.model_server import MAX_LINE_BYTES

REMOTE_ERRORS = {cls.__name__: cls for cls in (
    BadMessage, DuplicateName, DuplicateTag, MissingLimits, OperationContractError, StoreError,
    UnknownOperation, UnknownPath, UnknownTag, VersionMismatch)}


def error_from_message(message: Mapping[str, Any]) -> ArticulationError:
    """The domain error described by an error message; unlisted codes become ArticulationError."""
    cls = REMOTE_ERRORS.get(message.get('code'), ArticulationError)
    return cls(str(message.get('message', '')))


@attr.define(eq=False)
class ModelUpdate:
    """
    One change delivered to on-change hooks. ``defs`` and ``constraints`` hold None for
    removed entries. The last event of a connection is ``terminal`` and carries the error.
    """
    revision: int
    defs: Dict[ModelPath, Any] = attr.field(factory=dict)
    constraints: Dict[str, Optional[Constraint]] = attr.field(factory=dict)
    snapshot: bool = False
    terminal: bool = False
    error: Optional[ArticulationError] = None

    @property
    def changed_paths(self) -> List[ModelPath]:
        return sorted(self.defs)


Hook = Callable[[ModelUpdate], Union[None, Awaitable[None]]]


class ModelClient:
    """
    Connection to a model server with a local mirror of the subscribed definitions.

    Hooks run on the client's reader task, one update at a time and in revision order;
    they must not block for long.

        async with ModelClient('127.0.0.1', 7310) as client:
            await client.subscribe(['garage'], on_change=print)
            revision = await client.apply('lock garage', operation)
    """

    def __init__(self, host: str = '127.0.0.1', port: int = 7310) -> None:
        self.host = host
        self.port = port
        self.mirror: Dict[ModelPath, Any] = {}
        self.constraints: Dict[str, Constraint] = {}
        self.revision = -1
        self.disconnected: Optional[Disconnected] = None
        self._hooks: List[Tuple[Tuple[ModelPath, ...], Hook]] = []
        self._requests: Dict[int, asyncio.Future] = {}
        self._snapshots: Deque[Tuple[asyncio.Future, Optional[Hook]]] = deque()
        self._next_request = 0
        self._revision_event: Optional[asyncio.Event] = None
        self._reader: Optional[asyncio.StreamReader] = None
        self._writer: Optional[asyncio.StreamWriter] = None
        self._task: Optional[asyncio.Task] = None

    async def __aenter__(self) -> 'ModelClient':
        return await self.connect()

    async def __aexit__(self, *exc_info) -> None:
        await self.close()

    async def connect(self) -> 'ModelClient':
        """Opens the connection and exchanges hello; raises VersionMismatch or Disconnected."""
        try:
            self._reader, self._writer = await asyncio.open_connection(self.host, self.port, limit=MAX_LINE_BYTES)
        except OSError as exc:
            raise Disconnected(f'cannot reach the model server at {self.host}:{self.port}: {exc}') from None
        self._revision_event = asyncio.Event()
        await self._send(wire.hello())
        reply = await self._read()
        if reply['type'] == wire.ERROR:
            await self._close_transport()
            raise error_from_message(reply)
        if reply['type'] != wire.HELLO or reply['version'] != wire.PROTOCOL_VERSION:
            await self._close_transport()
            raise VersionMismatch(f'server answered {reply!r}, expected protocol version {wire.PROTOCOL_VERSION}')
        self._task = asyncio.create_task(self._read_loop())
        logging.info(f'connected to the model server at {self.host}:{self.port}')
        return self

    async def close(self) -> None:
        if self._task is not None:
            self._task.cancel()
            try:
                await self._task
            except asyncio.CancelledError:
                pass
            self._task = None
        await self._close_transport()

    async def _close_transport(self) -> None:
        if self._writer is None:
            return
        self._writer.close()
        try:
            await self._writer.wait_closed()
        except (ConnectionError, OSError):
            pass
        self._writer = None

    def definition(self, path) -> Any:
        path = as_path(path)
        try:
            return self.mirror[path]
        except KeyError:
            raise UnknownPath(f'{path} is not mirrored') from None

    async def subscribe(self, paths, on_change: Hook = None) -> ModelUpdate:
        """
        Subscribes to all definitions below the given path prefixes. Returns the initial
        snapshot; ``on_change`` receives the snapshot and every later update touching the
        prefixes or the constraints of the mirrored definitions.
        """
        paths = tuple(as_path(p) for p in paths)
        self._check_open()
        future = asyncio.get_running_loop().create_future()
        self._snapshots.append((future, on_change))
        if on_change is not None:
            self._hooks.append((paths, on_change))
        await self._send(wire.subscribe(paths))
        return await future

    async def apply(self, tag: str, operation: Operation, placement: Placement = Placement()) -> int:
        """Submits an operation; returns the revision it produced or raises the server's error."""
        self._check_open()
        self._next_request += 1
        request_id = self._next_request
        future = asyncio.get_running_loop().create_future()
        self._requests[request_id] = future
        try:
            await self._send(wire.apply_request(request_id, tag, operation, placement))
            if self.disconnected is not None and not future.done():
                raise self.disconnected
            return await future
        finally:
            self._requests.pop(request_id, None)

    async def wait_for_revision(self, revision: int, timeout: float = None) -> None:
        """Waits until the mirror reflects ``revision``; raises Disconnected if the connection ends first."""
        async def wait():
            while self.revision < revision:
                self._check_open()
                await self._revision_event.wait()
        await asyncio.wait_for(wait(), timeout)

    def _check_open(self) -> None:
        if self.disconnected is not None:
            raise self.disconnected
        if self._writer is None:
            raise Disconnected('client is not connected')

    async def _send(self, message: Dict[str, Any]) -> None:
        try:
            self._writer.write(wire.encode_message(message))
            await self._writer.drain()
        except (ConnectionError, OSError) as exc:
            raise Disconnected(f'lost the connection to the model server: {exc}') from None

    async def _read(self) -> Dict[str, Any]:
        try:
            line = await self._reader.readline()
        except (ConnectionError, OSError, ValueError) as exc:
            raise Disconnected(f'lost the connection to the model server: {exc}') from None
        if not line:
            raise Disconnected('the model server closed the connection')
        return wire.decode_message(line)

    async def _read_loop(self) -> None:
        try:
            while True:
                await self._handle(await self._read())
        except Disconnected as exc:
            await self._terminate(exc)
        except BadMessage as exc:
            await self._terminate(Disconnected(f'the model server sent an invalid message: {exc}'))
        except asyncio.CancelledError:
            await self._terminate(Disconnected('client closed'))
            raise

    async def _handle(self, message: Dict[str, Any]) -> None:
        kind = message['type']
        if kind == wire.UPDATE:
            await self._apply_update(message)
        elif kind == wire.ACK:
            future = self._requests.get(message['request_id'])
            if future is not None and not future.done():
                future.set_result(message['revision'])
        elif kind == wire.ERROR:
            error = error_from_message(message)
            future = self._requests.get(message.get('request_id'))
            if future is None and 'request_id' not in message and self._snapshots:
                future = self._snapshots.popleft()[0]
            if future is not None and not future.done():
                future.set_exception(error)
            else:
                logging.warning(f'model server reported {error.code}: {error}')
        else:
            logging.warning(f'ignoring unexpected {kind} message from the model server')

    async def _apply_update(self, message: Dict[str, Any]) -> None:
        revision, defs, constraints = wire.parse_update(message)
        for path, expr in defs.items():
            if expr is None:
                self.mirror.pop(path, None)
            else:
                self.mirror[path] = expr
        for name, constraint in constraints.items():
            if constraint is None:
                self.constraints.pop(name, None)
            else:
                self.constraints[name] = constraint
        self.revision = revision
        update = ModelUpdate(revision, defs, constraints, snapshot=bool(message.get('snapshot')))
        logging.debug(f'revision {revision}: {len(defs)} definitions, {len(constraints)} constraints changed')

        if update.snapshot and self._snapshots:
            future, hook = self._snapshots.popleft()
            if hook is not None:
                await self._call(hook, update)
            if not future.done():
                future.set_result(update)
        else:
            for prefixes, hook in list(self._hooks):
                if constraints or any(p.startswith(prefix) for p in defs for prefix in prefixes):
                    await self._call(hook, update)
        self._notify()

    async def _call(self, hook: Hook, update: ModelUpdate) -> None:
        try:
            result = hook(update)
            if inspect.isawaitable(result):
                await result
        except Exception as exc:
            logging.error(f'on-change hook {hook!r} failed at revision {update.revision}: {exc}')

    def _notify(self) -> None:
        event, self._revision_event = self._revision_event, asyncio.Event()
        event.set()

    async def _terminate(self, reason: Disconnected) -> None:
        if self.disconnected is not None:
            return
        self.disconnected = reason
        logging.info(f'model client disconnected: {reason}')
        for future in list(self._requests.values()) + [f for f, _ in self._snapshots]:
            if not future.done():
                future.set_exception(reason)
        self._snapshots.clear()
        terminal = ModelUpdate(self.revision, terminal=True, error=reason)
        for _, hook in list(self._hooks):
            await self._call(hook, terminal)
        self._notify()
