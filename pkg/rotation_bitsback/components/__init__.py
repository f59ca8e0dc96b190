"""Codec components: numerics, bit stack, rotation coding, canonical form, model, codec."""
