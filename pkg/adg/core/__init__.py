"""
Core utilities: exception hierarchy
"""
