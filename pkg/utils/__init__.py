"""
Utils package.

Configuration loading and validation.
"""
