"""
Pipeline package.

Stage functions, file formats, the run manifest and the command line.
"""
