"""
Slide layouts for the run summary deck.
"""

import logging

import pandas as pd
from pptx.enum.shapes import MSO_SHAPE
from pptx.enum.text import PP_ALIGN
from pptx.presentation import Presentation
from pptx.slide import Slide
from pptx.util import Cm, Pt

logger = logging.getLogger(__name__)

# 16:9 page
SLIDE_WIDTH = Cm(33.87)
SLIDE_HEIGHT = Cm(19.05)
MAX_TABLE_ROWS = 15
MAX_TABLE_COLUMNS = 10
TABLE_FONT = Pt(10)


def create_base_slide(prs: Presentation, title_text: str, content_text: str = "") -> Slide:
    """
    Adds a slide with the standard base layout: title, toolbar bar and a
    content text box.

    Returns:
        The slide that was created.
    """
    try:
        blank_layout = prs.slide_layouts[6]
    except IndexError:
        logger.warning("Blank layout (6) not found, using layout 0")
        blank_layout = prs.slide_layouts[0]

    slide = prs.slides.add_slide(blank_layout)

    title_frame = slide.shapes.add_textbox(Cm(1.54), Cm(0.48), Cm(30.78), Cm(2.03)).text_frame
    title_frame.text = title_text
    title_frame.paragraphs[0].alignment = PP_ALIGN.CENTER

    slide.shapes.add_shape(MSO_SHAPE.RECTANGLE, Cm(1.54), Cm(2.99), Cm(30.78), Cm(0.41))

    if content_text:
        content_frame = slide.shapes.add_textbox(Cm(1.54), Cm(5.22), Cm(30.8), Cm(12.34)).text_frame
        content_frame.text = content_text
    return slide


def format_cell(value) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def create_table_slide(prs: Presentation, title_text: str, df: pd.DataFrame) -> Slide:
    """Base slide with the first rows and columns of a table."""
    slide = create_base_slide(prs, title_text)
    shown = df.iloc[:MAX_TABLE_ROWS, :MAX_TABLE_COLUMNS]
    if len(df) > MAX_TABLE_ROWS or df.shape[1] > MAX_TABLE_COLUMNS:
        note = slide.shapes.add_textbox(Cm(1.54), Cm(3.6), Cm(30.78), Cm(1.0)).text_frame
        note.text = f"Showing {shown.shape[0]} of {len(df)} rows, {shown.shape[1]} of {df.shape[1]} columns"

    rows, cols = shown.shape[0] + 1, max(shown.shape[1], 1)
    table = slide.shapes.add_table(rows, cols, Cm(1.54), Cm(4.8), Cm(30.78), Cm(0.7) * rows).table
    for j, name in enumerate(shown.columns):
        table.cell(0, j).text = str(name)
    for i, row in enumerate(shown.itertuples(index=False), start=1):
        for j, value in enumerate(row):
            table.cell(i, j).text = format_cell(value)
    for cell in (table.cell(i, j) for i in range(rows) for j in range(cols)):
        for paragraph in cell.text_frame.paragraphs:
            paragraph.font.size = TABLE_FONT
    return slide
