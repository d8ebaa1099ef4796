"""Optimal procurement auctions on lossy networks."""
