"""Scheme clients: centralized, daily-key decentralized, and DH encounter tokens."""
