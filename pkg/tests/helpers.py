from cacsim.core import EngineConfig, Pair
from cacsim.crypto import get_provider
from cacsim.optimal import OptimalCac
from cacsim.simple import SimpleCac


class Cluster:
    """Keys and engine configs for hand-driven engine tests."""

    def __init__(self, n, t, k=1, instance=b"cac", value_valid=None):
        self.provider = get_provider("hmac")
        self.keys = {p: self.provider.keygen(p) for p in range(1, n + 1)}
        self.directory = {p: kp.public_key for p, kp in self.keys.items()}
        self.n, self.t, self.k = n, t, k
        self.instance = instance
        self.value_valid = value_valid

    def cfg(self):
        return EngineConfig(
            n=self.n, t=self.t, k=self.k, directory=self.directory, provider=self.provider,
            instance=self.instance, value_valid=self.value_valid,
        )

    def optimal(self, me):
        return OptimalCac(self.cfg(), me, self.keys[me])

    def simple(self, me):
        return SimpleCac(self.cfg(), me, self.keys[me])

