"""
Симулятор переноса массовой доли водорода по сети
"""
