"""
HENG Shared Package
Общие модели данных, схемы документов, конфигурация и утилиты
"""

__version__ = "0.1.0"
