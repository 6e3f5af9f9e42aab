"""
Core geometry package: frames, contours and signed distance fields.
"""
