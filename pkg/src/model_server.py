"""
Central model server: holds the tagged operation history, applies operations submitted
by clients in arrival order and pushes the changed definitions to subscribed clients.
All mutations go through one lock, which also assigns the revisions, so every client
observes the same total order of changes.
"""
import asyncio
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Set, Tuple

from src import wire_protocol as wire
from src.articulation_model import ArticulationModel, ChangeSet, Constraint, HistoryEntry, ModelBuilder, ModelPath, constraints_for
from src.errors import ArticulationError, BadMessage, StoreError, VersionMismatch
from src.kmodel_io import load_model_file, write_kmodel_file
from src.server_parameters import ServerParameters
from src.symexpr import variables

# models are small, but a single definition of a deep chain can be long
MAX_LINE_BYTES = 16 * 1024 * 1024


class ClientSession:
    """Per-connection state. Outgoing messages are queued so a slow client never blocks the writer lock."""

    def __init__(self, name: str, writer: asyncio.StreamWriter) -> None:
        self.name = name
        self.writer = writer
        self.greeted = False
        self.subscriptions: Tuple[ModelPath, ...] = ()
        self.constraint_names: Set[str] = set()
        self.outbox: asyncio.Queue = asyncio.Queue()

    def subscribed(self, path: ModelPath) -> bool:
        return any(path.startswith(prefix) for prefix in self.subscriptions)

    def send(self, message: Dict[str, Any]) -> None:
        self.outbox.put_nowait(message)

    async def write_loop(self) -> None:
        while True:
            message = await self.outbox.get()
            if message is None:
                return
            self.writer.write(wire.encode_message(message))
            await self.writer.drain()


class ModelServer:
    """
    Serves one articulation model over newline-delimited JSON.

    Parameters:
    history: initial operation history, ignored when the configured store file exists
    parameters: ServerParameters with the endpoint and the store file
    """

    def __init__(self, history: Iterable[HistoryEntry] = (), parameters: ServerParameters = None) -> None:
        self.parameters = ServerParameters() if parameters is None else parameters
        store = self.store_path
        if store is not None and store.is_file():
            history = load_model_file(store)
            logging.info(f'restored {len(history)} operations from {store}')
        self.builder = ModelBuilder(history)
        self.revision = 0
        self._write_lock = asyncio.Lock()
        self._sessions: Set[ClientSession] = set()
        self._server: Optional[asyncio.AbstractServer] = None
        self._connections = 0

    @property
    def store_path(self) -> Optional[Path]:
        return Path(self.parameters.store) if self.parameters.store else None

    @property
    def model(self) -> ArticulationModel:
        return self.builder.model

    @property
    def history(self) -> Tuple[HistoryEntry, ...]:
        return self.builder.history

    @property
    def port(self) -> int:
        if self._server is None:
            raise RuntimeError('server is not started')
        return self._server.sockets[0].getsockname()[1]

    async def start(self) -> None:
        if self.store_path is not None:
            self._persist()
        self._server = await asyncio.start_server(self._handle_client, self.parameters.ip_address,
                                                  self.parameters.port_number, limit=MAX_LINE_BYTES)
        logging.info(f'model server listening on {self.parameters.ip_address}:{self.port} '
                     f'({len(self.history)} operations, store {self.store_path})')

    async def serve_forever(self) -> None:
        if self._server is None:
            await self.start()
        await self._server.serve_forever()

    async def close(self) -> None:
        if self._server is None:
            return
        self._server.close()
        for session in list(self._sessions):
            session.send(None)
            session.writer.close()
        await self._server.wait_closed()
        self._server = None
        logging.info('model server stopped')

    def _persist(self) -> None:
        write_kmodel_file(self.store_path, list(self.history))

    async def _handle_client(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        self._connections += 1
        peer = writer.get_extra_info('peername')
        session = ClientSession(f'client {self._connections} {peer}', writer)
        self._sessions.add(session)
        sender = asyncio.create_task(session.write_loop())
        logging.info(f'{session.name} connected')
        try:
            while True:
                try:
                    line = await reader.readline()
                except ValueError:
                    session.send(wire.error(BadMessage.__name__, f'line exceeds {MAX_LINE_BYTES} bytes'))
                    break
                if not line:
                    break
                if not line.strip():
                    continue
                if not await self._dispatch(session, line):
                    break
        except ConnectionError as exc:
            logging.warning(f'{session.name} dropped: {exc}')
        finally:
            self._sessions.discard(session)
            session.send(None)
            try:
                await sender
                writer.close()
                await writer.wait_closed()
            except (ConnectionError, OSError):
                pass
            logging.info(f'{session.name} disconnected')

    async def _dispatch(self, session: ClientSession, line: bytes) -> bool:
        """Handles one request line; returns False when the connection should be closed."""
        try:
            message = wire.decode_message(line)
        except BadMessage as exc:
            logging.warning(f'{session.name}: {exc}')
            session.send(wire.error_from_exception(exc))
            return True
        kind = message['type']
        if not session.greeted:
            if kind != wire.HELLO:
                session.send(wire.error(BadMessage.__name__, 'the first message must be hello', message.get('request_id')))
                return True
            if message['version'] != wire.PROTOCOL_VERSION:
                session.send(wire.error(VersionMismatch.__name__, f'server speaks protocol version {wire.PROTOCOL_VERSION}, '
                                                                  f'client sent {message["version"]!r}'))
                return False
            session.greeted = True
            session.send(wire.hello())
            return True
        try:
            if kind == wire.SUBSCRIBE:
                await self._subscribe(session, wire.parse_paths(message))
            elif kind == wire.APPLY:
                await self._apply(session, *wire.parse_apply(message))
            else:
                raise BadMessage(f'clients do not send {kind} messages')
        except BadMessage as exc:
            logging.warning(f'{session.name}: {exc}')
            session.send(wire.error_from_exception(exc, message.get('request_id')))
        return True

    def _relevant_constraints(self, session: ClientSession) -> Dict[str, Constraint]:
        """Constraints sharing variables with the definitions the session mirrors."""
        found = set()
        for path, expr in self.model.exprs.items():
            if session.subscribed(path):
                found |= variables(expr)
        return constraints_for(self.model, found)

    def _constraint_changes(self, session: ClientSession, changed_names: Iterable[str]) -> Dict[str, Optional[Constraint]]:
        relevant = self._relevant_constraints(session)
        changes = {name: relevant[name] for name in changed_names if name in relevant}
        changes.update({name: c for name, c in relevant.items() if name not in session.constraint_names})
        changes.update({name: None for name in session.constraint_names - set(relevant)})
        session.constraint_names = set(relevant)
        return changes

    async def _subscribe(self, session: ClientSession, paths: Tuple[ModelPath, ...]) -> None:
        async with self._write_lock:
            session.subscriptions = tuple(dict.fromkeys(session.subscriptions + paths))
            defs = {p: e for p, e in self.model.exprs.items() if session.subscribed(p)}
            constraints = self._constraint_changes(session, self._relevant_constraints(session))
            session.send(wire.update(self.revision, defs, constraints, snapshot=True))
        logging.info(f'{session.name} subscribed to {[str(p) for p in paths]} ({len(defs)} definitions)')

    async def _apply(self, session: ClientSession, request_id, tag: str, operation, placement) -> None:
        async with self._write_lock:
            previous = self.builder.history
            try:
                changes = self.builder.apply_operation(tag, operation, placement)
            except ArticulationError as exc:
                logging.warning(f'{session.name}: rejected {operation.kind} {tag!r}: {exc}')
                session.send(wire.error_from_exception(exc, request_id))
                return
            if self.store_path is not None:
                try:
                    self._persist()
                except OSError as exc:
                    self.builder = ModelBuilder(previous)
                    logging.error(f'could not persist the history to {self.store_path}: {exc}')
                    session.send(wire.error_from_exception(StoreError(f'history not persisted: {exc}', tag), request_id))
                    return
            self.revision += 1
            self._broadcast(changes)
            session.send(wire.ack(request_id, self.revision))
        logging.info(f'revision {self.revision}: {session.name} applied {operation.kind} as {tag!r} ({placement.kind})')

    def _broadcast(self, changes: ChangeSet) -> None:
        touched = changes.changed_paths | changes.removed_paths
        constraint_names = changes.changed_constraints | changes.removed_constraints
        for session in self._sessions:
            if not session.greeted:
                continue
            defs = {p: self.model.exprs.get(p) for p in touched if session.subscribed(p)}
            constraints = self._constraint_changes(session, constraint_names)
            if defs or constraints:
                session.send(wire.update(self.revision, defs, constraints))


async def serve(history: Iterable[HistoryEntry] = (), parameters: ServerParameters = None) -> None:
    """Runs a model server until cancelled."""
    server = ModelServer(history, parameters)
    await server.start()
    try:
        await server.serve_forever()
    finally:
        await server.close()
