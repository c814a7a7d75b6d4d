"""
Модуль работы с конфигурацией HENG
"""
import configparser
import os
import shutil
from typing import Any, Optional
import logging

logger = logging.getLogger(__name__)


class Config:
    """Класс для работы с конфигурацией"""

    def __init__(self, config_file: str = "config.ini"):
        self.config_file = config_file
        self.config = configparser.ConfigParser()
        self.load()

    def load(self):
        """Загрузка конфигурации из файла"""
        if not os.path.exists(self.config_file):
            logger.warning(f"Config file {self.config_file} not found. Using defaults.")
            self._create_default_config()
        else:
            self.config.read(self.config_file, encoding='utf-8')
            logger.debug(f"Config loaded from {self.config_file}")

    def _create_default_config(self):
        """Создание конфигурации по умолчанию"""
        # Попытка скопировать из example файла
        example_file = self.config_file.replace('.ini', '.example.ini')
        if os.path.exists(example_file):
            shutil.copy(example_file, self.config_file)
            self.config.read(self.config_file, encoding='utf-8')
            logger.info(f"Config created from {example_file}")

    def get(self, section: str, key: str, fallback: Any = None) -> Any:
        """Получить значение из конфигурации"""
        try:
            return self.config.get(section, key, fallback=fallback)
        except (configparser.NoSectionError, configparser.NoOptionError):
            return fallback

    def get_int(self, section: str, key: str, fallback: int = 0) -> int:
        """Получить целочисленное значение"""
        try:
            return self.config.getint(section, key, fallback=fallback)
        except (configparser.NoSectionError, configparser.NoOptionError, ValueError):
            logger.warning(f"Invalid integer for [{section}] {key}, using default {fallback}")
            return fallback

    def get_float(self, section: str, key: str, fallback: float = 0.0) -> float:
        """Получить дробное значение"""
        try:
            return self.config.getfloat(section, key, fallback=fallback)
        except (configparser.NoSectionError, configparser.NoOptionError, ValueError):
            logger.warning(f"Invalid number for [{section}] {key}, using default {fallback}")
            return fallback

    def get_bool(self, section: str, key: str, fallback: bool = False) -> bool:
        """Получить булево значение"""
        try:
            return self.config.getboolean(section, key, fallback=fallback)
        except (configparser.NoSectionError, configparser.NoOptionError, ValueError):
            return fallback

    def _positive_int(self, section: str, key: str, fallback: int) -> int:
        value = self.get_int(section, key, fallback)
        if value < 1:
            logger.warning(f"Invalid [{section}] {key}={value}, using default {fallback}")
            return fallback
        return value

    def _positive_float(self, section: str, key: str, fallback: float) -> float:
        value = self.get_float(section, key, fallback)
        if not value > 0:
            logger.warning(f"Invalid [{section}] {key}={value}, using default {fallback}")
            return fallback
        return value


class AppConfig(Config):
    """Конфигурация приложения: симуляция, модель, обучение, журнал запусков"""

    def __init__(self, config_file: Optional[str] = None):
        super().__init__(config_file or os.environ.get('HENG_CONFIG', 'config.ini'))

    # --- logging ---

    @property
    def log_level(self) -> str:
        return self.get('logging', 'level', 'INFO')

    @property
    def log_file(self) -> str:
        path = self.get('logging', 'file', 'logs/heng.log')
        if not path:
            return ''
        # Если путь относительный, преобразуем в абсолютный
        if not os.path.isabs(path):
            from .utils import get_application_path
            path = os.path.join(get_application_path(), path)
        return path

    # --- simulation ---

    @property
    def snapshot_stride(self) -> int:
        return self._positive_int('simulation', 'snapshot_stride', 10)

    @property
    def reference_density(self) -> float:
        return self._positive_float('simulation', 'reference_density', 1.0)

    @property
    def courant(self) -> float:
        value = self.get_float('simulation', 'courant', 0.9)
        if not (0.0 < value <= 1.0):
            logger.warning(f"Invalid courant {value}, using default 0.9")
            return 0.9
        return value

    @property
    def default_cells(self) -> int:
        value = self.get_int('simulation', 'default_cells', 50)
        if value < 2:
            logger.warning(f"Invalid default_cells {value}, using default 50")
            return 50
        return value

    @property
    def permissible_fraction(self) -> float:
        value = self.get_float('simulation', 'permissible_fraction', 0.2)
        if not (0.0 <= value <= 1.0):
            logger.warning(f"Invalid permissible_fraction {value}, using default 0.2")
            return 0.2
        return value

    # --- model ---

    @property
    def sensors(self) -> int:
        return self._positive_int('model', 'sensors', 4)

    @property
    def boundary_samples(self) -> int:
        value = self.get_int('model', 'boundary_samples', 16)
        if value < 2:
            logger.warning(f"Invalid boundary_samples {value}, using default 16")
            return 16
        return value

    @property
    def latent(self) -> int:
        return self._positive_int('model', 'latent', 32)

    @property
    def head(self) -> int:
        return self._positive_int('model', 'head', 16)

    @property
    def embedding(self) -> int:
        return self._positive_int('model', 'embedding', 8)

    @property
    def rounds(self) -> int:
        value = self.get_int('model', 'rounds', 2)
        if value < 0:
            logger.warning(f"Invalid rounds {value}, using default 2")
            return 2
        return value

    @property
    def hidden_width(self) -> int:
        return self._positive_int('model', 'hidden_width', 64)

    @property
    def hidden_layers(self) -> int:
        value = self.get_int('model', 'hidden_layers', 2)
        if value < 0:
            logger.warning(f"Invalid hidden_layers {value}, using default 2")
            return 2
        return value

    @property
    def flow_channel(self) -> bool:
        return self.get_bool('model', 'flow_channel', False)

    def sampling_defaults(self) -> dict:
        """Значения для полей конфигурации выборки, не заданных в её файле"""
        return {
            'cells': self.default_cells,
            'courant': self.courant,
            'snapshot_stride': self.snapshot_stride,
            'reference_density': self.reference_density,
            'sensors': self.sensors,
            'boundary_samples': self.boundary_samples,
            'flow_channel': self.flow_channel,
        }

    # --- training ---

    @property
    def epochs(self) -> int:
        return self._positive_int('training', 'epochs', 200)

    @property
    def batch_size(self) -> int:
        return self._positive_int('training', 'batch_size', 256)

    @property
    def learning_rate(self) -> float:
        return self._positive_float('training', 'learning_rate', 1e-3)

    @property
    def final_learning_rate(self) -> Optional[float]:
        """Скорость обучения к последней эпохе; пусто - без затухания"""
        if not self.get('training', 'final_learning_rate', ''):
            return None
        return self._positive_float('training', 'final_learning_rate', self.learning_rate)

    @property
    def seed(self) -> int:
        return self.get_int('training', 'seed', 0)

    # --- runtime ---

    @property
    def threads(self) -> int:
        value = self.get_int('runtime', 'threads', 0)
        if value <= 0:
            from .utils import physical_cores
            return physical_cores()
        return value

    # --- registry ---

    @property
    def registry_enabled(self) -> bool:
        return self.get_bool('registry', 'enabled', True)

    @property
    def registry_path(self) -> str:
        path = self.get('registry', 'path', 'data/runs.db')
        # Если путь относительный, кладём файл в директорию данных
        if not os.path.isabs(path):
            from .utils import get_data_directory
            path = os.path.join(get_data_directory(), os.path.basename(path))
        return path
