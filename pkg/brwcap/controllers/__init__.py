"""
Controllers: samplers, evaluators and the experiment harness.
"""
