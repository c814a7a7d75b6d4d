"""
Командная строка HENG
"""
