"""
Журнал запусков HENG
SQLAlchemy модели
"""
import json
import logging
import os
from contextlib import contextmanager
from datetime import datetime
from typing import List

from sqlalchemy import Column, DateTime, Float, Integer, String, Text, create_engine
from sqlalchemy.orm import declarative_base, sessionmaker

from .models import RunManifest

logger = logging.getLogger(__name__)

Base = declarative_base()


class RunModel(Base):
    """Запись о запуске команды CLI"""
    __tablename__ = 'runs'

    id = Column(Integer, primary_key=True, autoincrement=True)
    command = Column(String(32), nullable=False, index=True)
    started_at = Column(DateTime, default=datetime.now, nullable=False)
    duration_s = Column(Float, default=0.0)
    seed = Column(Integer)
    tool_version = Column(String(32))
    exit_code = Column(Integer, default=0)
    output_dir = Column(String(1024))
    config_json = Column(Text)
    input_hashes_json = Column(Text)

    def __repr__(self):
        return f"<Run(id={self.id}, command='{self.command}', exit_code={self.exit_code})>"


class RunRegistry:
    """Класс для работы с базой запусков"""

    def __init__(self, db_path: str):
        """Инициализация БД"""
        parent_dir = os.path.dirname(os.path.abspath(db_path))
        os.makedirs(parent_dir, exist_ok=True)
        self.engine = create_engine(f'sqlite:///{db_path}', echo=False)
        Base.metadata.create_all(self.engine)
        self.Session = sessionmaker(bind=self.engine)

    @contextmanager
    def session_scope(self):
        """
        Контекстный менеджер для автоматического управления сессией БД.

        Выполняет commit при успешном завершении блока и rollback
        в случае исключения. Всегда закрывает сессию.

        Yields:
            Session: Объект сессии SQLAlchemy
        """
        session = self.Session()
        try:
            yield session
            session.commit()
        except Exception:
            session.rollback()
            raise
        finally:
            session.close()

    def record(self, manifest: RunManifest) -> int:
        """Сохранить манифест запуска, вернуть id записи"""
        started = datetime.fromisoformat(manifest.started_at) if manifest.started_at else datetime.now()
        with self.session_scope() as session:
            run = RunModel(
                command=manifest.command,
                started_at=started,
                duration_s=manifest.duration_s,
                seed=manifest.seed,
                tool_version=manifest.tool_version,
                exit_code=manifest.exit_code,
                output_dir=manifest.output_dir,
                config_json=json.dumps(manifest.config, sort_keys=True, default=str),
                input_hashes_json=json.dumps(manifest.input_hashes, sort_keys=True),
            )
            session.add(run)
            session.flush()
            run_id = run.id
        logger.debug(f"Run {run_id} ({manifest.command}) recorded")
        return run_id

    def recent(self, limit: int = 20) -> List[dict]:
        """Последние запуски, новые первыми"""
        with self.session_scope() as session:
            rows = (session.query(RunModel)
                    .order_by(RunModel.started_at.desc(), RunModel.id.desc())
                    .limit(limit).all())
            return [{
                'id': row.id,
                'command': row.command,
                'started_at': row.started_at.isoformat(timespec='seconds'),
                'duration_s': row.duration_s,
                'seed': row.seed,
                'exit_code': row.exit_code,
                'output_dir': row.output_dir,
            } for row in rows]

    def close(self) -> None:
        """Закрыть соединение"""
        self.engine.dispose()
