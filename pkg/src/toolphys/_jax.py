"""jax import with 64-bit floats enabled; trajectory residuals need them."""

import jax

jax.config.update("jax_enable_x64", True)

import jax.numpy as jnp  # noqa: E402

__all__ = ["jax", "jnp"]
