"""Bundled end-to-end fixture: a small trading database, eight questions with
gold SQL, and the scripted model transcripts that drive the full pipeline
offline.

The database carries a 20-member date-suffixed table series
(DAILY_METRICS_20240101..20240120, the last five days adding a var_95
column), an all-NULL column (accounts.legacy_code), and value formats that
differ from the question wording (side stored as 'L'/'S', strategies under
short code names), so refinement, alignment, and the feedback loop all have
real work to do.

Scripted rule patterns are anchored to the question line of each prompt
("Question:[^\\n]*...") so schema text and probe results can never
cross-match another question's rules.
"""

from __future__ import annotations

import json
import sqlite3
from pathlib import Path

DB_ID = "trading"

SERIES_DAYS = [f"202401{day:02d}" for day in range(1, 21)]
VAR95_FROM = "20240116"  # this day onward carries the extra column

STRATEGIES = [
    (1, "mom_v2", "trend following", "2023-01-10"),
    (2, "lucky_dip", "discretionary", "2023-03-05"),
    (3, "meanrev_core", "mean reversion", "2022-11-20"),
    (4, "carry_fx", "fx carry", "2023-06-15"),
]

SYMBOLS = [
    ("AAPL", "NASDAQ", "Tech"),
    ("MSFT", "NASDAQ", "Tech"),
    ("NVDA", "NASDAQ", "Tech"),
    ("XOM", "NYSE", "Energy"),
    ("JPM", "NYSE", "Financials"),
    ("CVX", "NYSE", "Energy"),
]

# (trade_id, strategy_id, symbol, side, quantity, price, executed_on)
TRADES = [
    (1, 1, "AAPL", "L", 100, 187.5, "2024-01-03"),
    (2, 1, "MSFT", "L", 50, 402.25, "2024-01-04"),
    (3, 1, "NVDA", "S", 30, 560.0, "2024-01-05"),
    (4, 1, "AAPL", "L", 80, 189.1, "2024-01-08"),
    (5, 1, "XOM", "S", 200, 99.4, "2024-01-09"),
    (6, 1, "MSFT", "L", 40, 405.75, "2024-01-10"),
    (7, 1, "NVDA", "L", 25, 571.2, "2024-01-11"),
    (8, 1, "JPM", "S", 60, 171.3, "2024-01-12"),
    (9, 2, "CVX", "L", 90, 148.2, "2024-01-03"),
    (10, 2, "AAPL", "S", 45, 186.9, "2024-01-05"),
    (11, 2, "JPM", "L", 70, 172.8, "2024-01-10"),
    (12, 2, "NVDA", "L", 15, 575.5, "2024-01-15"),
    (13, 3, "XOM", "S", 120, 98.7, "2024-01-04"),
    (14, 3, "CVX", "S", 85, 147.1, "2024-01-08"),
    (15, 3, "MSFT", "L", 35, 401.0, "2024-01-09"),
    (16, 3, "AAPL", "S", 55, 188.4, "2024-01-11"),
    (17, 3, "JPM", "L", 65, 170.9, "2024-01-15"),
    (18, 3, "XOM", "S", 110, 100.2, "2024-01-16"),
    (19, 4, "CVX", "L", 75, 149.0, "2024-01-05"),
    (20, 4, "JPM", "L", 95, 173.5, "2024-01-09"),
    (21, 4, "XOM", "S", 130, 99.9, "2024-01-10"),
    (22, 4, "AAPL", "L", 20, 190.2, "2024-01-12"),
    (23, 4, "MSFT", "S", 30, 404.1, "2024-01-16"),
    (24, 4, "NVDA", "L", 10, 580.3, "2024-01-18"),
]

ACCOUNTS = [
    (1, "Ada Birch", "2022-01-05"),
    (2, "Raj Patel", "2022-03-09"),
    (3, "Mei Chen", "2023-02-11"),
    (4, "Tom Diaz", "2023-07-30"),
]

DESKS = [(1, "Equities", "S. Okoye"), (2, "Macro", "L. Fontaine")]

ACCOUNT_DESK = [(1, 1), (2, 1), (3, 2), (4, 2), (1, 2)]

_METRIC_COLS = [
    "gross_pnl", "net_pnl", "trade_count", "win_rate", "max_drawdown",
    "sharpe", "turnover", "fees", "exposure", "avg_hold_hours", "slippage",
]


def _metric_row(strategy_id: int, day: str, with_var95: bool) -> tuple:
    d = int(day[-2:])
    gross = round(strategy_id * 100.0 + d * 3.5, 2)
    fees = round(strategy_id * 1.25 + d * 0.1, 2)
    row = (
        strategy_id,
        gross,
        round(gross - fees, 2),
        strategy_id * 3 + d % 5,
        round(((strategy_id * 13 + d) % 40 + 30) / 100.0, 2),
        round(-((strategy_id * 5 + d) % 12) / 4.0, 2),
        round(((strategy_id * 7 + d) % 10) / 4.0, 2),
        round(strategy_id * 0.8 + d * 0.05, 2),
        fees,
        round(strategy_id * 1000.0 + d * 10, 1),
        round((strategy_id * 11 + d) % 48 + 0.5, 1),
        round((strategy_id + d) * 0.01, 2),
    )
    if with_var95:
        row += (round(strategy_id * 10 + d / 100.0, 2),)
    return row


def build_trading_db(path: str | Path) -> None:
    conn = sqlite3.connect(path)
    try:
        conn.executescript(
            """
            CREATE TABLE strategies (
                strategy_id INTEGER PRIMARY KEY,
                name TEXT,
                style TEXT,
                launched TEXT
            );
            CREATE TABLE symbols (
                symbol TEXT PRIMARY KEY,
                exchange TEXT,
                sector TEXT
            );
            CREATE TABLE trades (
                trade_id INTEGER PRIMARY KEY,
                strategy_id INTEGER REFERENCES strategies(strategy_id),
                symbol TEXT REFERENCES symbols(symbol),
                side TEXT,
                quantity INTEGER,
                price REAL,
                executed_on TEXT
            );
            CREATE TABLE accounts (
                account_id INTEGER PRIMARY KEY,
                owner TEXT,
                opened TEXT,
                legacy_code TEXT
            );
            CREATE TABLE desks (
                desk_id INTEGER PRIMARY KEY,
                name TEXT,
                head TEXT
            );
            CREATE TABLE account_desk (
                account_id INTEGER REFERENCES accounts(account_id),
                desk_id INTEGER REFERENCES desks(desk_id)
            );
            """
        )
        conn.executemany("INSERT INTO strategies VALUES (?,?,?,?)", STRATEGIES)
        conn.executemany("INSERT INTO symbols VALUES (?,?,?)", SYMBOLS)
        conn.executemany("INSERT INTO trades VALUES (?,?,?,?,?,?,?)", TRADES)
        conn.executemany(
            "INSERT INTO accounts VALUES (?,?,?,NULL)", ACCOUNTS
        )
        conn.executemany("INSERT INTO desks VALUES (?,?,?)", DESKS)
        conn.executemany("INSERT INTO account_desk VALUES (?,?)", ACCOUNT_DESK)
        for day in SERIES_DAYS:
            with_var = day >= VAR95_FROM
            cols = ["strategy_id"] + _METRIC_COLS + (["var_95"] if with_var else [])
            decls = ", ".join(
                f"{c} {'INTEGER' if c in ('strategy_id', 'trade_count') else 'REAL'}"
                for c in cols
            )
            conn.execute(f"CREATE TABLE DAILY_METRICS_{day} ({decls})")
            rows = [_metric_row(s, day, with_var) for s, *_ in STRATEGIES]
            marks = ",".join("?" * len(cols))
            conn.executemany(f"INSERT INTO DAILY_METRICS_{day} VALUES ({marks})", rows)
        conn.commit()
    finally:
        conn.close()


GOLD = {
    "q1": "SELECT COUNT(*) FROM trades",
    "q2": (
        "SELECT COUNT(*) FROM trades t JOIN strategies s "
        "ON t.strategy_id = s.strategy_id WHERE s.name = 'mom_v2' AND t.side = 'L'"
    ),
    "q3": "SELECT symbol FROM symbols WHERE exchange = 'NASDAQ'",
    "q4": (
        "SELECT s.name, m.net_pnl FROM DAILY_METRICS_20240120 m "
        "JOIN strategies s ON m.strategy_id = s.strategy_id"
    ),
    "q5": (
        "SELECT d.name, COUNT(*) FROM account_desk ad "
        "JOIN desks d ON ad.desk_id = d.desk_id GROUP BY d.name"
    ),
    "q6": (
        "SELECT AVG(t.price) FROM trades t JOIN symbols sy "
        "ON t.symbol = sy.symbol WHERE sy.sector = 'Tech'"
    ),
    "q7": (
        "SELECT s.name FROM DAILY_METRICS_20240115 m "
        "JOIN strategies s ON m.strategy_id = s.strategy_id "
        "ORDER BY m.sharpe DESC LIMIT 1"
    ),
    "q8": (
        "SELECT COUNT(*) FROM trades t JOIN strategies s "
        "ON t.strategy_id = s.strategy_id WHERE s.name = 'carry_fx'"
    ),
}

# q8 is the planted miss: the scripted model filters on a name that is not in
# the database, so its count disagrees with gold and exactly 7/8 match.
WRONG_Q8 = (
    "SELECT COUNT(*) FROM trades t JOIN strategies s "
    "ON t.strategy_id = s.strategy_id WHERE s.name = 'carry'"
)

Q6_TYPO = (
    "SELECT AVG(t.price) FORM trades t JOIN symbols sy "
    "ON t.symbol = sy.symbol WHERE sy.sector = 'Tech'"
)

DATASET = [
    {
        "question_id": "q1",
        "db_id": DB_ID,
        "question": "How many trades were executed in total across all strategies?",
        "evidence": "",
        "SQL": GOLD["q1"],
    },
    {
        "question_id": "q2",
        "db_id": DB_ID,
        "question": "How many long-side trades did the momentum strategy make?",
        "evidence": "The momentum strategy is stored under a short code name.",
        "SQL": GOLD["q2"],
    },
    {
        "question_id": "q3",
        "db_id": DB_ID,
        "question": "Which symbols trade on the NASDAQ exchange?",
        "evidence": "",
        "SQL": GOLD["q3"],
    },
    {
        "question_id": "q4",
        "db_id": DB_ID,
        "question": "What was each strategy's net pnl on 2024-01-20?",
        "evidence": "",
        "SQL": GOLD["q4"],
    },
    {
        "question_id": "q5",
        "db_id": DB_ID,
        "question": "How many accounts does each desk serve?",
        "evidence": "",
        "SQL": GOLD["q5"],
    },
    {
        "question_id": "q6",
        "db_id": DB_ID,
        "question": "What is the average trade price for Tech sector symbols?",
        "evidence": "",
        "SQL": GOLD["q6"],
    },
    {
        "question_id": "q7",
        "db_id": DB_ID,
        "question": "Which strategy had the highest sharpe ratio on 2024-01-15?",
        "evidence": "",
        "SQL": GOLD["q7"],
    },
    {
        "question_id": "q8",
        "db_id": DB_ID,
        "question": "How many trades did the carry strategy make?",
        "evidence": "",
        "SQL": GOLD["q8"],
    },
]


def _q(marker: str) -> str:
    return rf"Question:[^\n]*{marker}"


def _fenced(sql: str) -> str:
    return f"```sql\n{sql}\n```"


SERIES_DESCRIPTION = (
    "Daily strategy metrics partitioned by date. The family follows "
    "DAILY_METRICS_[DATE], where [DATE] is a YYYYMMDD day running from "
    "20240101 through 20240120. Tables from 20240116 onward add a var_95 "
    "column that earlier days lack; every member stores per-strategy gross "
    "and net pnl, trade counts, win rate, drawdown, sharpe, turnover, fees, "
    "and exposure. Query a specific day by substituting its date into the "
    "table name."
)

ALIGNMENT_NOTE = (
    "Trade sides are stored as single letters: 'L' for long and 'S' for "
    "short. Strategies are stored under short code names such as mom_v2, "
    "lucky_dip, meanrev_core, and carry_fx."
)


def scripted_rules() -> list[dict]:
    """The full scripted transcript for the eight-question replay suite."""
    rules: list[dict] = [
        {
            "tag": "refine.describe_series",
            "pattern": "DAILY_METRICS",
            "response": SERIES_DESCRIPTION,
        },
        # -- selection: both sampling rounds reuse the same reply ------------
        {"tag": "select.sample_tables", "pattern": _q("in total across"),
         "response": _fenced(GOLD["q1"])},
        {"tag": "select.sample_tables", "pattern": _q("momentum"),
         "response": _fenced("SELECT * FROM trades JOIN strategies ON 1=1")},
        {"tag": "select.sample_tables", "pattern": _q("NASDAQ"),
         "response": _fenced(GOLD["q3"])},
        {"tag": "select.sample_tables", "pattern": _q("net pnl"),
         "response": _fenced(GOLD["q4"])},
        {"tag": "select.sample_tables", "pattern": _q("desk serve|accounts does each desk"),
         "response": _fenced(GOLD["q5"])},
        {"tag": "select.sample_tables", "pattern": _q("average trade price"),
         "response": _fenced(GOLD["q6"])},
        {"tag": "select.sample_tables", "pattern": _q("highest sharpe"),
         "response": _fenced(
             "SELECT * FROM DAILY_METRICS_20240120 JOIN strategies ON 1=1"
         )},
        {"tag": "select.sample_tables", "pattern": _q("carry strategy"),
         "response": _fenced("SELECT * FROM trades JOIN strategies ON 1=1")},
        # -- alignment --------------------------------------------------------
        {"tag": "align.probes", "pattern": _q("momentum"),
         "response": _fenced("SELECT DISTINCT side FROM trades")
         + "\n" + _fenced("SELECT strategy_id, name FROM strategies")},
        {"tag": "align.probes", "pattern": "",
         "response": _fenced("SELECT COUNT(*) FROM trades")},
        {"tag": "align.summarize", "pattern": "", "response": ALIGNMENT_NOTE},
        # -- generation: initial queries --------------------------------------
        {"tag": "evolve.initial", "pattern": _q("in total across"),
         "response": _fenced(GOLD["q1"])},
        {"tag": "evolve.initial", "pattern": _q("momentum"),
         "response": _fenced(
             "SELECT COUNT(*) FROM trades t JOIN strategies s "
             "ON t.strategy_id = s.strategy_id "
             "WHERE s.name = 'momentum' AND t.side = 'LONG'"
         )},
        {"tag": "evolve.initial", "pattern": _q("NASDAQ"),
         "response": _fenced(GOLD["q3"])},
        {"tag": "evolve.initial", "pattern": _q("net pnl"),
         "response": _fenced(GOLD["q4"])},
        {"tag": "evolve.initial", "pattern": _q("desk serve|accounts does each desk"),
         "response": _fenced(
             "SELECT d.title, COUNT(*) FROM account_desk ad "
             "JOIN desks d ON ad.desk_id = d.desk_id GROUP BY d.title"
         )},
        {"tag": "evolve.initial", "pattern": _q("average trade price"),
         "response": _fenced(GOLD["q6"])},
        {"tag": "evolve.initial", "pattern": _q("highest sharpe"),
         "response": _fenced(GOLD["q7"])},
        {"tag": "evolve.initial", "pattern": _q("carry strategy"),
         "response": _fenced(WRONG_Q8)},
        # -- generation: action selection -------------------------------------
        {"tag": "evolve.select_action", "pattern": _q("momentum"),
         "responses": [
             "ACTION: EXPLORE\nA count of zero suggests the stored labels differ from the wording.",
             "ACTION: FINALIZE\nThe distinct values show how sides and names are stored.",
         ]},
        {"tag": "evolve.select_action", "pattern": _q("desk serve|accounts does each desk"),
         "responses": [
             "ACTION: REVISE\nThe desks table has no title column.",
             "ACTION: FINALIZE\nThe grouped counts look right.",
         ]},
        {"tag": "evolve.select_action", "pattern": "",
         "response": "ACTION: FINALIZE\nThe result answers the question."},
        # -- generation: follow-up queries -------------------------------------
        {"tag": "evolve.next", "pattern": _q("momentum"),
         "response": _fenced("SELECT DISTINCT side FROM trades")},
        {"tag": "evolve.next", "pattern": _q("desk serve|accounts does each desk"),
         "response": _fenced(GOLD["q5"])},
        # -- generation: final queries ------------------------------------------
        {"tag": "evolve.final", "pattern": _q("in total across"),
         "response": _fenced(GOLD["q1"])},
        {"tag": "evolve.final", "pattern": _q("momentum"),
         "response": _fenced(GOLD["q2"])},
        {"tag": "evolve.final", "pattern": _q("NASDAQ"),
         "response": _fenced(GOLD["q3"])},
        {"tag": "evolve.final", "pattern": _q("net pnl"),
         "response": _fenced(GOLD["q4"])},
        {"tag": "evolve.final", "pattern": _q("desk serve|accounts does each desk"),
         "response": _fenced(GOLD["q5"])},
        {"tag": "evolve.final", "pattern": _q("average trade price"),
         "response": _fenced(Q6_TYPO)},
        {"tag": "evolve.final", "pattern": _q("highest sharpe"),
         "response": _fenced(GOLD["q7"])},
        {"tag": "evolve.final", "pattern": _q("carry strategy"),
         "response": _fenced(WRONG_Q8)},
        # -- correction loop -----------------------------------------------------
        {"tag": "evolve.correct", "pattern": r"FORM trades",
         "response": _fenced(GOLD["q6"])},
    ]
    return rules


def write_fixture(root: str | Path) -> dict[str, Path]:
    """Materialize the database, dataset, and rules file under ``root``."""
    root = Path(root)
    db_root = root / "databases"
    db_root.mkdir(parents=True, exist_ok=True)
    db_path = db_root / f"{DB_ID}.sqlite"
    if not db_path.exists():
        build_trading_db(db_path)
    dataset_path = root / "dataset.json"
    dataset_path.write_text(json.dumps(DATASET, indent=2))
    rules_path = root / "rules.json"
    rules_path.write_text(json.dumps(scripted_rules(), indent=2))
    return {"db_root": db_root, "db_path": db_path, "dataset": dataset_path, "rules": rules_path}
