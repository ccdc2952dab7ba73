"""
Command-line surface of the ADG framework
"""
