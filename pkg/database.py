"""
SQLite storage for benchmark results and strong-partitioning runs
"""

import csv
import logging
import sqlite3
from pathlib import Path
from typing import Dict, List, Optional

from config import RESULTS_DB_PATH
from driver import RESULT_FIELDS

logger = logging.getLogger(__name__)

RESULT_COLUMNS = RESULT_FIELDS


class ResultsDatabase:
    """Manages SQLite operations for solve results and SP runs"""

    def __init__(self, db_path=None):
        self.db_path = Path(db_path) if db_path is not None else RESULTS_DB_PATH
        self.db_path.parent.mkdir(parents=True, exist_ok=True)
        self.init_database()

    def init_database(self):
        """Create tables if they don't exist"""
        with sqlite3.connect(self.db_path) as conn:
            conn.execute("""
                CREATE TABLE IF NOT EXISTS solve_results (
                    id INTEGER PRIMARY KEY AUTOINCREMENT,
                    instance_id TEXT NOT NULL,
                    policy TEXT NOT NULL,
                    status TEXT NOT NULL,
                    time_s REAL NOT NULL,
                    iterations INTEGER NOT NULL,
                    lbd REAL,
                    ubd REAL,
                    eff_gap_iter1 REAL,
                    tle_gap REAL,
                    created_at DATETIME DEFAULT CURRENT_TIMESTAMP,
                    UNIQUE (instance_id, policy)
                )
            """)
            conn.execute("""
                CREATE TABLE IF NOT EXISTS sp_runs (
                    id INTEGER PRIMARY KEY AUTOINCREMENT,
                    instance_id TEXT NOT NULL UNIQUE,
                    value REAL NOT NULL,
                    evals INTEGER NOT NULL,
                    wall_s REAL NOT NULL,
                    created_at DATETIME DEFAULT CURRENT_TIMESTAMP
                )
            """)
            conn.commit()

    def add_result(self, record) -> int:
        """Insert or replace the row for (instance_id, policy)"""
        row = record.to_dict() if hasattr(record, "to_dict") else dict(record)
        values = [row.get(c) for c in RESULT_COLUMNS]
        with sqlite3.connect(self.db_path) as conn:
            conn.execute(f"""
                INSERT INTO solve_results ({", ".join(RESULT_COLUMNS)})
                VALUES ({", ".join("?" for _ in RESULT_COLUMNS)})
                ON CONFLICT (instance_id, policy) DO UPDATE SET
                    status = excluded.status, time_s = excluded.time_s, iterations = excluded.iterations,
                    lbd = excluded.lbd, ubd = excluded.ubd, eff_gap_iter1 = excluded.eff_gap_iter1,
                    tle_gap = excluded.tle_gap, created_at = CURRENT_TIMESTAMP
            """, values)
            conn.commit()
            found = conn.execute("SELECT id FROM solve_results WHERE instance_id = ? AND policy = ?",
                                 (row["instance_id"], row["policy"])).fetchone()
            return found[0]

    def get_results(self, policy: Optional[str] = None) -> List[Dict]:
        with sqlite3.connect(self.db_path) as conn:
            conn.row_factory = sqlite3.Row
            if policy is None:
                cursor = conn.execute(f"""
                    SELECT {", ".join(RESULT_COLUMNS)} FROM solve_results
                    ORDER BY instance_id, policy
                """)
            else:
                cursor = conn.execute(f"""
                    SELECT {", ".join(RESULT_COLUMNS)} FROM solve_results
                    WHERE policy = ?
                    ORDER BY instance_id, policy
                """, (policy,))
            return [dict(row) for row in cursor.fetchall()]

    def get_result(self, instance_id: str, policy: str) -> Optional[Dict]:
        with sqlite3.connect(self.db_path) as conn:
            conn.row_factory = sqlite3.Row
            cursor = conn.execute(f"""
                SELECT {", ".join(RESULT_COLUMNS)} FROM solve_results
                WHERE instance_id = ? AND policy = ?
            """, (instance_id, policy))
            row = cursor.fetchone()
            return dict(row) if row else None

    def delete_result(self, instance_id: str, policy: str) -> bool:
        with sqlite3.connect(self.db_path) as conn:
            cursor = conn.execute("DELETE FROM solve_results WHERE instance_id = ? AND policy = ?",
                                  (instance_id, policy))
            conn.commit()
            return cursor.rowcount > 0

    def get_results_count(self) -> int:
        with sqlite3.connect(self.db_path) as conn:
            return conn.execute("SELECT COUNT(*) FROM solve_results").fetchone()[0]

    def add_sp_run(self, instance_id: str, value: float, evals: int, wall_s: float) -> int:
        with sqlite3.connect(self.db_path) as conn:
            conn.execute("""
                INSERT INTO sp_runs (instance_id, value, evals, wall_s) VALUES (?, ?, ?, ?)
                ON CONFLICT (instance_id) DO UPDATE SET
                    value = excluded.value, evals = excluded.evals, wall_s = excluded.wall_s,
                    created_at = CURRENT_TIMESTAMP
            """, (instance_id, float(value), int(evals), float(wall_s)))
            conn.commit()
            return conn.execute("SELECT id FROM sp_runs WHERE instance_id = ?", (instance_id,)).fetchone()[0]

    def get_sp_runs(self) -> List[Dict]:
        with sqlite3.connect(self.db_path) as conn:
            conn.row_factory = sqlite3.Row
            cursor = conn.execute("SELECT instance_id, value, evals, wall_s FROM sp_runs ORDER BY instance_id")
            return [dict(row) for row in cursor.fetchall()]

    def export_to_csv(self, filepath) -> bool:
        """Export results in the results CSV schema; created_at stays in the database"""
        try:
            records = self.get_results()
            with open(filepath, "w", newline="", encoding="utf-8") as csvfile:
                writer = csv.DictWriter(csvfile, fieldnames=RESULT_COLUMNS)
                writer.writeheader()
                for record in records:
                    writer.writerow({k: ("" if record[k] is None else record[k]) for k in RESULT_COLUMNS})
            return True
        except (sqlite3.Error, OSError) as e:
            logger.error(f"Error exporting to CSV: {e}")
            return False
