"""Level-set morphing with particle and curvelet tracking."""
