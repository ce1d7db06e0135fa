"""
ThieleKit Test Suite
"""
