"""
Utility modules for brwcap.
"""
