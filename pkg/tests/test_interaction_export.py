"""The console's generated tables module must match the engine's export."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from humantool.interaction import export_tables

GENERATED = Path(__file__).parent.parent / "frontend" / "src" / "generated" / "tables.ts"


@pytest.mark.skipif(not GENERATED.exists(), reason="frontend not checked out")
def test_generated_tables_in_sync():
    text = GENERATED.read_text(encoding="utf-8")
    start = text.index("export const TABLES = ") + len("export const TABLES = ")
    end = text.index(" as const;")
    embedded = json.loads(text[start:end])
    assert embedded == export_tables(), (
        "frontend/src/generated/tables.ts is stale; regenerate it from export_tables()"
    )
