"""
Файл чекпоинта: архив numpy (.npz)

    header.npy   0-мерная строка JSON: версия, дескриптор модели, параметры Adam,
                 состояние генератора, дополнительные сведения
    params.npy   параметры модели, float64
    adam_m.npy   первые моменты Adam (если есть)
    adam_v.npy   вторые моменты Adam (если есть)

Записи архива получают фиксированную дату, поэтому повторная запись
тех же данных даёт идентичные байты
"""
import json
import logging
import zipfile
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from ..shared.errors import DatasetFormatError
from ..shared.utils import ensure_parent
from .optim import AdamState

logger = logging.getLogger(__name__)

FORMAT_VERSION = 2
ENTRY_DATE = (1980, 1, 1, 0, 0, 0)


@dataclass(eq=False)
class Checkpoint:
    """Содержимое чекпоинта"""
    descriptor: dict
    params: np.ndarray
    adam: Optional[AdamState] = None
    rng_state: Optional[dict] = None
    extra: dict = field(default_factory=dict)


def save_checkpoint(path: str, checkpoint: Checkpoint) -> None:
    optimizer = None
    arrays: Dict[str, np.ndarray] = {'params': np.asarray(checkpoint.params, dtype='<f8')}
    if checkpoint.adam is not None:
        adam = checkpoint.adam
        arrays['adam_m'] = np.asarray(adam.m, dtype='<f8')
        arrays['adam_v'] = np.asarray(adam.v, dtype='<f8')
        optimizer = {'step': adam.step, 'lr': adam.lr, 'beta1': adam.beta1,
                     'beta2': adam.beta2, 'eps': adam.eps}
    header = {
        'format_version': FORMAT_VERSION,
        'descriptor': checkpoint.descriptor,
        'optimizer': optimizer,
        'rng_state': checkpoint.rng_state,
        'extra': checkpoint.extra,
    }
    entries = {'header': np.array(json.dumps(header, sort_keys=True, separators=(',', ':'))), **arrays}

    ensure_parent(path)
    with zipfile.ZipFile(path, 'w', compression=zipfile.ZIP_STORED) as archive:
        for name, array in entries.items():
            info = zipfile.ZipInfo(f'{name}.npy', date_time=ENTRY_DATE)
            with archive.open(info, 'w', force_zip64=True) as f:
                np.lib.format.write_array(f, array, allow_pickle=False)
    logger.info(f"Checkpoint written to {path} ({checkpoint.params.size} parameters)")


def load_checkpoint(path: str) -> Checkpoint:
    """
    Raises:
        DatasetFormatError: файл отсутствует, повреждён или имеет другую версию
    """
    try:
        loaded = np.load(path, allow_pickle=False)
    except FileNotFoundError as e:
        raise DatasetFormatError(f"checkpoint not found: {path}") from e
    except (OSError, ValueError, EOFError, zipfile.BadZipFile) as e:
        raise DatasetFormatError(f"{path}: corrupted checkpoint: {e}") from e
    if not isinstance(loaded, np.lib.npyio.NpzFile):
        raise DatasetFormatError(f"{path}: not a checkpoint archive")

    try:
        with loaded as archive:
            header = json.loads(archive['header'].item())
            arrays = {name: np.array(archive[name], dtype=np.float64)
                      for name in ('params', 'adam_m', 'adam_v') if name in archive.files}
    except (OSError, ValueError, EOFError, KeyError, zipfile.BadZipFile) as e:
        raise DatasetFormatError(f"{path}: corrupted checkpoint: {e}") from e

    if not isinstance(header, dict) or header.get('format_version') != FORMAT_VERSION:
        version = header.get('format_version') if isinstance(header, dict) else None
        raise DatasetFormatError(f"{path}: unsupported checkpoint version {version}")
    if 'params' not in arrays:
        raise DatasetFormatError(f"{path}: checkpoint has no parameters")
    adam = None
    opt = header.get('optimizer')
    if opt is not None:
        if 'adam_m' not in arrays or 'adam_v' not in arrays:
            raise DatasetFormatError(f"{path}: optimizer state without moment arrays")
        adam = AdamState(arrays['adam_m'], arrays['adam_v'], opt['step'], opt['lr'],
                         opt['beta1'], opt['beta2'], opt['eps'])
    return Checkpoint(descriptor=header['descriptor'], params=arrays['params'], adam=adam,
                      rng_state=header.get('rng_state'), extra=header.get('extra') or {})
