"""Shared wiring helpers for module-level tests: a minimal multi-node rig."""
from situated.ants import explore_schema, intention_schema
from situated.codec import ContentLanguage
from situated.dyncnet import dyncnet_schema
from situated.environment import Directory, ExternalEnvironment, VirtualEnvironment
from situated.kernel import Kernel, NetworkConfig


def make_language():
    lang = ContentLanguage()
    lang.register(dyncnet_schema())
    lang.register(explore_schema())
    lang.register(intention_schema())
    return lang


class NullExternal(ExternalEnvironment):
    """External stub that records operations and answers no observations."""

    def __init__(self):
        self.operations = []

    def operate(self, operation, ve):
        self.operations.append(operation)


class Rig:
    """Kernel plus one virtual environment per node, with delivery routing."""

    def __init__(self, node_ids, graph=None, network=None, language=None):
        self.kernel = Kernel(network or NetworkConfig())
        self.language = language or make_language()
        self.directory = Directory()
        self.external = NullExternal()
        self.ves = {}
        self.kernel.on("deliver", self._route)
        for node_id in node_ids:
            self.add_node(node_id, graph)

    def add_node(self, node_id, graph=None):
        ve = VirtualEnvironment(node_id, self.kernel, self.directory,
                                self.language, self.external, graph)
        self.ves[node_id] = ve
        self.kernel.join_node(node_id, local_ve=ve)
        return ve

    def _route(self, kernel, record):
        ve = self.ves.get(record.node)
        if ve is not None and kernel.is_alive(record.node):
            ve.deliver_transmission(record.payload["src"], record.payload["uid"],
                                    record.payload["data"])

    def sync_all(self):
        for node_id in sorted(self.ves):
            if self.kernel.is_alive(node_id):
                self.ves[node_id].synchronize_local()

    def settle(self, max_steps=1000):
        """Run until the event queue drains."""
        for _ in range(max_steps):
            if not self.kernel.step():
                return
        raise AssertionError("rig did not settle")

    def tick(self, n=1):
        """Advance n ticks: sync every environment, then drain the tick."""
        for _ in range(n):
            self.sync_all()
            self.kernel.advance_to(self.kernel.now + 1)
