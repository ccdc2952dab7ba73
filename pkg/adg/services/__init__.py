"""
Services: losses, solvers, protocol engines, baselines, data and metrics
"""
