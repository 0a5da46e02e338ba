"""Decentralized voltage control of multi-terminal HVDC grids."""
