"""
ADG - asynchronous distributed gradient framework
"""

__version__ = "1.0.0"
