"""Association and alignment between successive cross-sections."""
