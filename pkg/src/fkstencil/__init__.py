"""Expectation-based wide-stencil schemes for 2D parabolic problems."""
