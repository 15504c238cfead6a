import asyncio
import json
import tempfile
import unittest
from pathlib import Path
from unittest import mock

import numpy as np

from src import wire_protocol as wire
from src.articulation_model import Placement, as_path, replay
from src.errors import BadMessage, DuplicateTag, StoreError, UnknownPath
from src.frames import translation
from src.kmodel_io import load_model_file
from src.model_client import ModelClient
from src.model_server import ModelServer
from src.operations import connect_joint, create_body
from src.server_parameters import ServerParameters
from src.symexpr import evaluate

TIMEOUT = 5.0


def arm_history():
    return [
        ('create base', create_body('base')),
        ('create link', create_body('link')),
        ('connect base link', connect_joint('revolute', 'base', 'link', axis=(0, 0, 1), var_name='q1',
                                            limits=(-1.0, 1.0), vel_limit=0.5)),
        ('create tool', create_body('tool')),
        ('connect link tool', connect_joint('prismatic', 'link', 'tool', axis=(1, 0, 0), var_name='q2',
                                            limits=(0.0, 0.3))),
    ]


def raised_joint(height=1.0):
    return connect_joint('revolute', 'base', 'link', origin=translation(0.0, 0.0, height), axis=(0, 0, 1), var_name='q1',
                         limits=(-1.0, 1.0), vel_limit=0.5)


class TestWireProtocol(unittest.TestCase):

    def test_decode_rejects_invalid_lines(self):
        for line in (b'not json\n', b'[1, 2]\n', b'{"type": "shout"}\n', b'{"type": "apply", "tag": "x"}\n'):
            with self.subTest(line=line):
                with self.assertRaises(BadMessage):
                    wire.decode_message(line)

    def test_apply_request_decodes(self):
        message = wire.decode_message(wire.encode_message(
            wire.apply_request(7, 'connect base link', raised_joint(), Placement.replace('connect base link'))))
        request_id, tag, operation, placement = wire.parse_apply(message)
        self.assertEqual(request_id, 7)
        self.assertEqual(tag, 'connect base link')
        self.assertEqual(operation.kind, 'connect_joint')
        self.assertEqual(placement, Placement.replace('connect base link'))

    def test_invalid_paths(self):
        with self.assertRaises(BadMessage):
            wire.parse_paths({'type': wire.SUBSCRIBE, 'paths': 'tool'})
        with self.assertRaises(BadMessage):
            wire.parse_paths({'type': wire.SUBSCRIBE, 'paths': ['a..b']})

    def test_update_removal(self):
        message = wire.update(3, {as_path('tool'): None}, {'q2_position': None})
        revision, defs, constraints = wire.parse_update(json.loads(wire.encode_message(message)))
        self.assertEqual(revision, 3)
        self.assertEqual(defs, {as_path('tool'): None})
        self.assertEqual(constraints, {'q2_position': None})


class TestModelServer(unittest.IsolatedAsyncioTestCase):

    async def asyncSetUp(self):
        self.directory = tempfile.TemporaryDirectory()
        self.store = Path(self.directory.name) / 'store.kmodel'
        self.server = ModelServer(arm_history(), ServerParameters(port_number=0, store=str(self.store)))
        await self.server.start()
        self.clients = []

    async def asyncTearDown(self):
        for client in self.clients:
            await client.close()
        await self.server.close()
        self.directory.cleanup()

    async def connect(self) -> ModelClient:
        client = await ModelClient('127.0.0.1', self.server.port).connect()
        self.clients.append(client)
        return client

    async def raw_connection(self):
        reader, writer = await asyncio.open_connection('127.0.0.1', self.server.port)
        self.addAsyncCleanup(self._close_writer, writer)
        return reader, writer

    @staticmethod
    async def _close_writer(writer):
        writer.close()
        try:
            await writer.wait_closed()
        except (ConnectionError, OSError):
            pass

    async def test_snapshot(self):
        client = await self.connect()
        snapshot = await asyncio.wait_for(client.subscribe(['tool']), TIMEOUT)
        self.assertTrue(snapshot.snapshot)
        self.assertEqual(snapshot.revision, 0)
        self.assertEqual(snapshot.changed_paths, [as_path('tool')])
        self.assertEqual(set(client.constraints), {'q1_position', 'q2_position'})
        tool = evaluate(client.definition('tool'), {'q1': np.pi / 2, 'q2': 0.2})
        np.testing.assert_allclose(tool[:3, 3], [0.0, 0.2, 0.0], atol=1e-12)
        with self.assertRaises(UnknownPath):
            client.definition('link')

    async def test_change_reaches_other_client(self):
        writer, watcher = await self.connect(), await self.connect()
        updates = []
        await asyncio.wait_for(watcher.subscribe(['tool'], on_change=updates.append), TIMEOUT)
        revision = await asyncio.wait_for(
            writer.apply('connect base link', raised_joint(), Placement.replace('connect base link')), TIMEOUT)
        self.assertEqual(revision, 1)
        await watcher.wait_for_revision(1, timeout=TIMEOUT)
        self.assertEqual([u.revision for u in updates], [0, 1])
        self.assertEqual(updates[1].changed_paths, [as_path('tool')])
        tool = evaluate(watcher.definition('tool'), {'q1': 0.0, 'q2': 0.1})
        np.testing.assert_allclose(tool[:3, 3], [0.1, 0.0, 1.0], atol=1e-12)

    async def test_rapid_applies_arrive_in_order(self):
        writer, watcher = await self.connect(), await self.connect()
        updates = []
        await asyncio.wait_for(watcher.subscribe(['tool'], on_change=updates.append), TIMEOUT)
        heights = (1.0, 2.0)
        revisions = await asyncio.wait_for(asyncio.gather(
            *(writer.apply('connect base link', raised_joint(h), Placement.replace('connect base link')) for h in heights)),
            TIMEOUT)
        self.assertEqual(sorted(revisions), [1, 2])
        await watcher.wait_for_revision(2, timeout=TIMEOUT)
        self.assertEqual([u.revision for u in updates], [0, 1, 2])
        final_height = heights[revisions.index(2)]
        tool = evaluate(watcher.definition('tool'), {'q1': 0.0, 'q2': 0.0})
        np.testing.assert_allclose(tool[:3, 3], [0.0, 0.0, final_height], atol=1e-12)

    async def test_unmatched_subscription_gets_no_updates(self):
        writer, watcher = await self.connect(), await self.connect()
        updates = []
        snapshot = await asyncio.wait_for(watcher.subscribe(['elsewhere'], on_change=updates.append), TIMEOUT)
        self.assertEqual(snapshot.defs, {})
        await asyncio.wait_for(writer.apply('connect base link', raised_joint(), Placement.replace('connect base link')),
                               TIMEOUT)
        await asyncio.wait_for(writer.apply('create cart', create_body('cart')), TIMEOUT)
        # the ack of the watcher's own apply is queued behind any update for the earlier revisions
        revision = await asyncio.wait_for(watcher.apply('create crate', create_body('crate')), TIMEOUT)
        self.assertEqual(revision, 3)
        self.assertEqual([u.revision for u in updates], [0])
        self.assertEqual(watcher.mirror, {})
        self.assertEqual(watcher.constraints, {})

    async def test_mirror_matches_server_after_quiescence(self):
        writer, watcher = await self.connect(), await self.connect()
        prefixes = [as_path(p) for p in ('link', 'tool', 'cart')]
        await asyncio.wait_for(watcher.subscribe(prefixes), TIMEOUT)
        steps = [
            ('connect base link', raised_joint(0.5), Placement.replace('connect base link')),
            ('create cart', create_body('cart'), Placement()),
            ('connect link cart', connect_joint('prismatic', 'link', 'cart', axis=(0, 1, 0), var_name='q3',
                                                limits=(0.0, 0.2)), Placement()),
            ('connect link tool', connect_joint('revolute', 'link', 'tool', axis=(1, 0, 0), var_name='q2',
                                                limits=(-0.5, 0.5)), Placement.replace('connect link tool')),
        ]
        for tag, operation, placement in steps:
            revision = await asyncio.wait_for(writer.apply(tag, operation, placement), TIMEOUT)
        await watcher.wait_for_revision(revision, timeout=TIMEOUT)

        subscribed = {p for p in self.server.model.exprs if any(p.startswith(prefix) for prefix in prefixes)}
        self.assertEqual(set(watcher.mirror), subscribed)
        self.assertEqual(set(watcher.constraints), {'q1_position', 'q1_velocity', 'q2_position', 'q3_position'})
        rng = np.random.default_rng(3)
        for _ in range(20):
            q = {'q1': rng.uniform(-1.0, 1.0), 'q2': rng.uniform(-0.5, 0.5), 'q3': rng.uniform(0.0, 0.2)}
            for path in subscribed:
                np.testing.assert_allclose(evaluate(watcher.definition(path), q),
                                           evaluate(self.server.model.get(path), q), rtol=0, atol=1e-12)

    async def test_history_replays_to_live_model(self):
        client = await self.connect()
        steps = [
            ('connect base link', raised_joint(), Placement.replace('connect base link')),
            ('create cart', create_body('cart'), Placement()),
            ('create anchor', create_body('anchor'), Placement.before('create base')),
            ('connect link cart', connect_joint('prismatic', 'link', 'cart', axis=(0, 1, 0), var_name='q3',
                                                limits=(0.0, 0.2)), Placement()),
        ]
        for tag, operation, placement in steps:
            with self.subTest(tag=tag):
                await asyncio.wait_for(client.apply(tag, operation, placement), TIMEOUT)
                rebuilt = replay(self.server.history)
                self.assertEqual(rebuilt.exprs, self.server.model.exprs)
                self.assertEqual(rebuilt.constraints, self.server.model.constraints)

    async def test_rejected_operation(self):
        client = await self.connect()
        with self.assertRaises(DuplicateTag):
            await asyncio.wait_for(client.apply('create tool', create_body('other')), TIMEOUT)
        self.assertEqual(self.server.revision, 0)
        self.assertEqual(len(self.server.history), len(arm_history()))

    async def test_store_failure_rolls_back(self):
        client = await self.connect()
        with mock.patch('src.model_server.write_kmodel_file', side_effect=OSError('disk full')):
            with self.assertRaises(StoreError):
                await asyncio.wait_for(client.apply('create cart', create_body('cart')), TIMEOUT)
        self.assertEqual(self.server.revision, 0)
        self.assertFalse(self.server.model.has('cart'))
        self.assertNotIn('create cart', [tag for tag, _ in load_model_file(self.store)])

    async def test_history_survives_restart(self):
        client = await self.connect()
        await asyncio.wait_for(client.apply('create cart', create_body('cart')), TIMEOUT)
        await client.close()
        self.clients.remove(client)
        await self.server.close()
        self.assertIn('create cart', [tag for tag, _ in load_model_file(self.store)])

        self.server = ModelServer(parameters=ServerParameters(port_number=0, store=str(self.store)))
        await self.server.start()
        self.assertEqual(self.server.history[-1][0], 'create cart')
        self.assertTrue(self.server.model.has('cart'))

    async def test_version_mismatch_closes_connection(self):
        reader, writer = await self.raw_connection()
        writer.write(wire.encode_message(wire.hello(version=2)))
        await writer.drain()
        reply = wire.decode_message(await asyncio.wait_for(reader.readline(), TIMEOUT))
        self.assertEqual(reply['type'], wire.ERROR)
        self.assertEqual(reply['code'], 'VersionMismatch')
        self.assertEqual(await asyncio.wait_for(reader.readline(), TIMEOUT), b'')

    async def test_bad_message_keeps_connection(self):
        reader, writer = await self.raw_connection()
        writer.write(wire.encode_message(wire.hello()))
        writer.write(b'not json\n')
        writer.write(wire.encode_message(wire.subscribe(['base'])))
        await writer.drain()
        replies = [wire.decode_message(await asyncio.wait_for(reader.readline(), TIMEOUT)) for _ in range(3)]
        self.assertEqual([r['type'] for r in replies], [wire.HELLO, wire.ERROR, wire.UPDATE])
        self.assertEqual(replies[1]['code'], 'BadMessage')
        self.assertTrue(replies[2]['snapshot'])

    async def test_hello_required_first(self):
        reader, writer = await self.raw_connection()
        writer.write(wire.encode_message(wire.subscribe(['base'])))
        await writer.drain()
        reply = wire.decode_message(await asyncio.wait_for(reader.readline(), TIMEOUT))
        self.assertEqual(reply['code'], 'BadMessage')


if __name__ == '__main__':
    unittest.main()
