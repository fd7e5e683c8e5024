"""
Results store for study cells.
Keeps one row per (study, cell) in SQLite with automatic timestamp triggers.
"""

import sqlite3
import logging
from contextlib import closing
from pathlib import Path
from typing import Any

logger = logging.getLogger('mcp_magnetostatics_server.database')

CELLS_TABLE = "study_cells"

CREATE_CELLS_TABLE = f"""
CREATE TABLE IF NOT EXISTS {CELLS_TABLE} (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    cell_id TEXT NOT NULL,
    study_name TEXT NOT NULL,
    method TEXT NOT NULL,
    h_level INTEGER NOT NULL,
    p INTEGER NOT NULL,
    dofs INTEGER,
    iterations INTEGER,
    wall_time REAL,
    terminated TEXT,
    final_energy REAL,
    certificate TEXT,
    error TEXT,
    created TEXT,
    last_modified TEXT,
    UNIQUE (study_name, cell_id)
)
"""


def has_column(conn: sqlite3.Connection, table_name: str, column_name: str) -> bool:
    """Check if a table has a specific column."""
    cursor = conn.execute(f"PRAGMA table_info({table_name})")
    return any(column[1] == column_name for column in cursor.fetchall())


def create_timestamp_triggers(conn: sqlite3.Connection, table_name: str) -> None:
    """Fill 'created' on insert and 'last_modified' on insert and update."""
    statements = []
    if has_column(conn, table_name, "created"):
        statements.append(f"""
        CREATE TRIGGER IF NOT EXISTS {table_name}_set_created_timestamp
        AFTER INSERT ON {table_name}
        FOR EACH ROW
        WHEN NEW.created IS NULL
        BEGIN
            UPDATE {table_name} SET created = DATETIME('now') WHERE rowid = NEW.rowid;
        END
        """)
    if has_column(conn, table_name, "last_modified"):
        statements.append(f"""
        CREATE TRIGGER IF NOT EXISTS {table_name}_insert_modified_timestamp
        AFTER INSERT ON {table_name}
        FOR EACH ROW
        WHEN NEW.last_modified IS NULL
        BEGIN
            UPDATE {table_name} SET last_modified = DATETIME('now') WHERE rowid = NEW.rowid;
        END
        """)
        statements.append(f"""
        CREATE TRIGGER IF NOT EXISTS {table_name}_update_modified_timestamp
        AFTER UPDATE ON {table_name}
        FOR EACH ROW
        BEGIN
            UPDATE {table_name} SET last_modified = DATETIME('now') WHERE rowid = NEW.rowid;
        END
        """)
    try:
        for statement in statements:
            conn.execute(statement)
        conn.commit()
        logger.debug(f"Timestamp triggers ready on table {table_name}")
    except sqlite3.Error as e:
        conn.rollback()
        logger.error(f"Error creating triggers for table {table_name}: {e}")
        raise


class SqliteDatabase:
    def __init__(self, db_path: str):
        """Open (or create) the results store"""
        self.db_path = str(Path(db_path).expanduser())
        Path(self.db_path).parent.mkdir(parents=True, exist_ok=True)
        self._init_database()

    def _init_database(self):
        """Create the cells table and its timestamp triggers"""
        logger.debug(f"Initializing results store {self.db_path}")
        with closing(sqlite3.connect(self.db_path)) as conn:
            conn.execute(CREATE_CELLS_TABLE)
            conn.commit()
            create_timestamp_triggers(conn, CELLS_TABLE)

    def _execute_query(self, query: str, params: Any = None) -> list[dict[str, Any]]:
        """Execute a SQL query and return results as a list of dictionaries"""
        logger.debug(f"Executing query: {query}")
        try:
            with closing(sqlite3.connect(self.db_path)) as conn:
                conn.row_factory = sqlite3.Row
                with closing(conn.cursor()) as cursor:
                    if params:
                        cursor.execute(query, params)
                    else:
                        cursor.execute(query)

                    if query.strip().upper().startswith(('INSERT', 'UPDATE', 'DELETE')):
                        conn.commit()
                        affected = cursor.rowcount
                        logger.debug(f"Write query affected {affected} rows")
                        return [{"affected_rows": affected}]

                    results = [dict(row) for row in cursor.fetchall()]
                    logger.debug(f"Read query returned {len(results)} rows")
                    return results
        except sqlite3.Error as e:
            logger.error(f"Database error executing query: {e}")
            raise

    def record_cell(self, cell, study_name: str) -> None:
        """Insert a StudyCell, or update the row of a cell recorded before"""
        query = f"""
        INSERT INTO {CELLS_TABLE} (
            cell_id, study_name, method, h_level, p, dofs, iterations, wall_time,
            terminated, final_energy, certificate, error
        ) VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?)
        ON CONFLICT (study_name, cell_id) DO UPDATE SET
            dofs = excluded.dofs,
            iterations = excluded.iterations,
            wall_time = excluded.wall_time,
            terminated = excluded.terminated,
            final_energy = excluded.final_energy,
            certificate = excluded.certificate,
            error = excluded.error
        """
        params = [cell.cell_id, study_name, cell.method, cell.h_level, cell.p, cell.dofs, cell.iterations,
                  cell.wall_time, cell.terminated, cell.final_energy, cell.certificate, cell.error]
        self._execute_query(query, params)
        logger.info(f"Recorded cell {cell.cell_id} of study {study_name}")

    def list_cells(self, study_name: str | None = None) -> list[dict[str, Any]]:
        query = f"SELECT * FROM {CELLS_TABLE}"
        params = None
        if study_name:
            query += " WHERE study_name = ?"
            params = [study_name]
        query += " ORDER BY study_name, method, p, h_level"
        return self._execute_query(query, params)
