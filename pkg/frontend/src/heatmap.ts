/**
 * Deterministic SVG heatmaps from consolidated sweep tables.
 *
 * The output is a pure function of the parsed table and the options:
 * fixed fonts, fixed geometry, fixed number formatting. Rendering the
 * same JSON twice yields byte-identical SVG.
 */

import { MISSING_COLOR, deltaColor, divergingColor, ratioColor } from "./colormap.js";
import { Cell, Row, SweepTable } from "./schema.js";

export type Metric = "delta" | "ratio" | "mean";

export interface HeatmapOptions {
  metric: Metric;
  title?: string;
}

const CELL_W = 96;
const CELL_H = 34;
const FONT = "monospace";
const MARGIN = 12;
const TITLE_H = 34;
const HEADER_H = 28;
const LEGEND_H = 46;

function esc(s: string): string {
  return s
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

function cellValue(cell: Cell, metric: Metric): number | null {
  if (metric === "delta") return cell.delta_pp ?? null;
  if (metric === "ratio") return cell.median_ratio;
  return cell.mean;
}

function cellText(value: number | null, metric: Metric): string {
  if (value === null) return "n/a";
  if (metric === "delta") return (value >= 0 ? "+" : "") + value.toFixed(2);
  if (metric === "ratio") return value.toFixed(3);
  return (100 * value).toFixed(2);
}

function cellColor(value: number | null, metric: Metric): string {
  if (value === null) return MISSING_COLOR;
  if (metric === "delta") return deltaColor(value);
  if (metric === "ratio") return ratioColor(value);
  // plain means: map [0, 1] accuracy onto the positive half of the scale
  return divergingColor(Math.max(0, Math.min(1, value)));
}

function defaultTitle(table: SweepTable, metric: Metric): string {
  const what =
    metric === "delta"
      ? "Top-1 change vs full model (pp)"
      : metric === "ratio"
        ? "median hyperbolic/Euclidean loss ratio"
        : "Top-1 (%)";
  return `${table.table}: ${what}`;
}

export function heatmapRows(table: SweepTable): Row[] {
  return table.reference ? [table.reference, ...table.rows] : [...table.rows];
}

export function buildHeatmapSvg(table: SweepTable, options: HeatmapOptions): string {
  const rows = heatmapRows(table);
  const labelW =
    16 + 8 * Math.max(...rows.map((r) => r.label.length), "variant".length);
  const gridW = table.columns.length * CELL_W;
  const width = MARGIN * 2 + labelW + gridW;
  const height = MARGIN * 2 + TITLE_H + HEADER_H + rows.length * CELL_H + LEGEND_H;
  const title = options.title ?? defaultTitle(table, options.metric);

  const parts: string[] = [];
  parts.push(
    `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" height="${height}" ` +
      `viewBox="0 0 ${width} ${height}">`
  );
  parts.push(`<rect width="${width}" height="${height}" fill="#ffffff"/>`);
  parts.push(
    `<text x="${MARGIN}" y="${MARGIN + 18}" font-family="${FONT}" font-size="15" ` +
      `font-weight="bold" fill="#222222">${esc(title)}</text>`
  );

  const gridX = MARGIN + labelW;
  const gridY = MARGIN + TITLE_H + HEADER_H;

  table.columns.forEach((col, j) => {
    const x = gridX + j * CELL_W + CELL_W / 2;
    parts.push(
      `<text x="${x}" y="${gridY - 9}" font-family="${FONT}" font-size="12" ` +
        `text-anchor="middle" fill="#222222">${esc(col)}</text>`
    );
  });

  rows.forEach((row, i) => {
    const y = gridY + i * CELL_H;
    parts.push(
      `<text x="${gridX - 8}" y="${y + CELL_H / 2 + 4}" font-family="${FONT}" ` +
        `font-size="12" text-anchor="end" fill="#222222" data-row="${esc(row.key)}">` +
        `${esc(row.label)}</text>`
    );
    table.columns.forEach((col, j) => {
      const cell = row.cells[col];
      const value = cellValue(cell, options.metric);
      const x = gridX + j * CELL_W;
      parts.push(
        `<rect x="${x}" y="${y}" width="${CELL_W}" height="${CELL_H}" ` +
          `fill="${cellColor(value, options.metric)}" stroke="#444444" stroke-width="1"/>`
      );
      parts.push(
        `<text x="${x + CELL_W / 2}" y="${y + CELL_H / 2 + 4}" font-family="${FONT}" ` +
          `font-size="12" text-anchor="middle" fill="#111111">` +
          `${cellText(value, options.metric)}</text>`
      );
    });
  });

  // legend: three reference swatches (low / neutral / high)
  const legendY = gridY + rows.length * CELL_H + 18;
  const stops: Array<[string, string]> =
    options.metric === "ratio"
      ? [
          [ratioColor(0.01), "0.01"],
          [ratioColor(1), "1"],
          [ratioColor(100), "100"],
        ]
      : options.metric === "delta"
        ? [
            [deltaColor(-10), "-10pp"],
            [deltaColor(0), "0"],
            [deltaColor(10), "+10pp"],
          ]
        : [
            [divergingColor(0), "0%"],
            [divergingColor(0.5), "50%"],
            [divergingColor(1), "100%"],
          ];
  stops.forEach(([color, label], i) => {
    const x = gridX + i * 90;
    parts.push(
      `<rect x="${x}" y="${legendY}" width="18" height="14" fill="${color}" ` +
        `stroke="#444444" stroke-width="1"/>`
    );
    parts.push(
      `<text x="${x + 24}" y="${legendY + 11}" font-family="${FONT}" font-size="11" ` +
        `fill="#222222">${esc(label)}</text>`
    );
  });

  parts.push("</svg>");
  return parts.join("\n") + "\n";
}
