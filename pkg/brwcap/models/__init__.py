"""
Data models for brwcap.
"""
