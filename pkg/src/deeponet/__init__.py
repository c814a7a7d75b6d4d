"""
Графово-расширенный DeepONet и классический DeepONet
"""
