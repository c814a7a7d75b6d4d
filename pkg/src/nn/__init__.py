"""
Минимальная подсистема плотных нейросетей: параметры, лента, Adam
"""
