"""
Learned navigators: tensor toolkit, policies and training loops
"""
