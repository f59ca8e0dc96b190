"""Bits-back weight codec for rotation-symmetric sliced transformers."""
