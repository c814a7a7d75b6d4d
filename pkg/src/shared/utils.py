"""
Утилиты: пути приложения, логирование, хеши файлов
"""
import hashlib
import json
import logging
import os
import sys
from typing import Any, Optional

import psutil

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def get_application_path() -> str:
    """
    Получение базового пути приложения
    Учитывает запуск через PyInstaller (проверяет sys.frozen)

    Returns:
        Путь к директории с исполняемым файлом или корнем проекта
    """
    if getattr(sys, 'frozen', False):
        return os.path.dirname(sys.executable)
    # __file__ находится в src/shared/utils.py, поднимаемся на 3 уровня вверх
    return os.path.abspath(os.path.join(os.path.dirname(__file__), '..', '..'))


def get_data_directory() -> str:
    """
    Получение пути к директории данных приложения
    Создает директорию, если она не существует
    """
    data_dir = os.path.join(get_application_path(), 'data')
    os.makedirs(data_dir, exist_ok=True)
    return data_dir


def physical_cores() -> int:
    """Количество физических ядер (минимум 1)"""
    return psutil.cpu_count(logical=False) or psutil.cpu_count() or 1


def peak_memory_mb() -> float:
    """Резидентная память текущего процесса, МБ"""
    return psutil.Process().memory_info().rss / (1024 * 1024)


def setup_logging(level: str = 'INFO', log_file: Optional[str] = None) -> None:
    """
    Настройка корневого логгера: stderr и, при необходимости, файл

    Args:
        level: Уровень логирования ('DEBUG', 'INFO', ...)
        log_file: Путь к файлу журнала или None
    """
    handlers = [logging.StreamHandler()]
    if log_file:
        parent = os.path.dirname(log_file)
        if parent:
            os.makedirs(parent, exist_ok=True)
        handlers.append(logging.FileHandler(log_file, encoding='utf-8'))
    logging.basicConfig(
        level=getattr(logging, str(level).upper(), logging.INFO),
        format=LOG_FORMAT,
        handlers=handlers,
        force=True,
    )


def canonical_json(data: Any) -> str:
    """Детерминированная сериализация: отсортированные ключи, без пробелов"""
    return json.dumps(data, sort_keys=True, separators=(',', ':'), ensure_ascii=False)


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode('utf-8')).hexdigest()


def file_sha256(path: str) -> str:
    """SHA-256 содержимого файла"""
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 20), b''):
            digest.update(chunk)
    return digest.hexdigest()


def ensure_parent(path: str) -> None:
    """Создать родительскую директорию для файла"""
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
