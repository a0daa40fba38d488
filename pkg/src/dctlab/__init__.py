"""dctlab: digital contact tracing protocol workbench.

Three scheme families (centralized, daily-key decentralized, Diffie-Hellman
encounter tokens) running over a deterministic simulated BLE radio, plus a
tracing server and an adversary lab that turns the known attacks on these
protocols into executable scenarios.
"""

__version__ = "0.1.0"
