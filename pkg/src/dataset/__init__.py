"""
Генерация сценариев и обучающих выборок
"""
