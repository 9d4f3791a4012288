"""Shift-invariant shared-dictionary compression for recurrent networks."""
