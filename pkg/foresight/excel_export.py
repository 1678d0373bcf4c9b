"""
Excel export for tournament pairing matrices

Workbook layout:
- Sheet 1: Pairings (one row per ordered pairing, all report fields)
- Sheet 2+: one matrix per metric (rows = agent1 checkpoint, columns = agent2 checkpoint)
"""

from pathlib import Path
from typing import Dict, Sequence

import pandas as pd
from openpyxl import Workbook
from openpyxl.styles import Alignment, Border, Font, PatternFill, Side
from openpyxl.utils import get_column_letter

HEADER_FILL = PatternFill(start_color="5B9BD5", end_color="5B9BD5", fill_type="solid")
DIAGONAL_FILL = PatternFill(start_color="FFF2CC", end_color="FFF2CC", fill_type="solid")
THIN = Side(style="thin")
BORDER = Border(left=THIN, right=THIN, top=THIN, bottom=THIN)


def _header_row(ws, row: int, headers: Sequence[str]) -> None:
    for col, h in enumerate(headers, 1):
        cell = ws.cell(row=row, column=col, value=h)
        cell.font = Font(bold=True, color="FFFFFF")
        cell.fill = HEADER_FILL
        cell.border = BORDER
        cell.alignment = Alignment(horizontal="center")


def _autosize(ws) -> None:
    for col_cells in ws.columns:
        width = max(len(str(c.value)) if c.value is not None else 0 for c in col_cells)
        ws.column_dimensions[get_column_letter(col_cells[0].column)].width = min(max(10, width + 2), 40)


def _create_pairings_sheet(ws, pairings: pd.DataFrame) -> None:
    headers = list(pairings.columns)
    _header_row(ws, 1, headers)
    for r, row in enumerate(pairings.itertuples(index=False), start=2):
        for col, value in enumerate(row, 1):
            cell = ws.cell(row=r, column=col, value=None if pd.isna(value) else value)
            cell.border = BORDER
    ws.freeze_panes = "A2"
    _autosize(ws)


def _create_matrix_sheet(ws, title: str, matrix: pd.DataFrame) -> None:
    ws.cell(row=1, column=1, value=title).font = Font(bold=True, size=14)
    _header_row(ws, 3, ["agent1 \\ agent2"] + [str(c) for c in matrix.columns])
    for r, (label, row) in enumerate(matrix.iterrows(), start=4):
        head = ws.cell(row=r, column=1, value=str(label))
        head.font = Font(bold=True)
        head.border = BORDER
        for col, (other, value) in enumerate(row.items(), start=2):
            cell = ws.cell(row=r, column=col, value=None if pd.isna(value) else round(float(value), 4))
            cell.border = BORDER
            cell.alignment = Alignment(horizontal="right")
            if other == label:
                cell.fill = DIAGONAL_FILL
    _autosize(ws)


def export_pairings_to_excel(pairings: pd.DataFrame, matrices: Dict[str, pd.DataFrame], path: Path) -> Path:
    """
    Write the tournament workbook.

    Args:
        pairings: One row per ordered pairing
        matrices: Metric name -> square matrix (agent1 label x agent2 label)
        path: Target .xlsx file

    Returns:
        Path: the written file
    """
    wb = Workbook()
    wb.remove(wb.active)
    _create_pairings_sheet(wb.create_sheet(title="Pairings"), pairings)
    for metric, matrix in matrices.items():
        _create_matrix_sheet(wb.create_sheet(title=metric[:31]), metric, matrix)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    wb.save(path)
    return path
