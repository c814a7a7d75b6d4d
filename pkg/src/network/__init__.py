"""
Топология трубопроводной сети HENG
"""
