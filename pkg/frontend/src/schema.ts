/**
 * Consolidated sweep-table schema (version 1), as emitted by
 * `mcrfm ablate` / `mcrfm sweep`. Parsing rejects anything whose
 * schema_version differs from what this renderer supports.
 */

export const SUPPORTED_SCHEMA_VERSION = 1;

export interface Cell {
  mean: number;
  std: number;
  values: number[];
  median_ratio: number | null;
  delta_pp?: number;
}

export interface Row {
  key: string;
  label: string;
  cells: Record<string, Cell>;
  settings?: Record<string, number>;
}

export interface SweepTable {
  schema_version: number;
  kind: string;
  table: string;
  metric: string;
  metadata: Record<string, unknown>;
  columns: string[];
  rows: Row[];
  reference?: Row;
  reference_key?: string;
}

export class SchemaError extends Error {}

function isObject(x: unknown): x is Record<string, unknown> {
  return typeof x === "object" && x !== null && !Array.isArray(x);
}

function checkCell(cell: unknown, where: string): Cell {
  if (!isObject(cell)) throw new SchemaError(`${where}: cell is not an object`);
  if (typeof cell.mean !== "number" || typeof cell.std !== "number") {
    throw new SchemaError(`${where}: cell needs numeric mean/std`);
  }
  if (!Array.isArray(cell.values) || cell.values.some((v) => typeof v !== "number")) {
    throw new SchemaError(`${where}: cell.values must be a number list`);
  }
  if (cell.median_ratio !== null && typeof cell.median_ratio !== "number") {
    throw new SchemaError(`${where}: median_ratio must be a number or an explicit null`);
  }
  return cell as unknown as Cell;
}

function checkRow(row: unknown, columns: string[], where: string): Row {
  if (!isObject(row)) throw new SchemaError(`${where}: row is not an object`);
  if (typeof row.key !== "string" || typeof row.label !== "string") {
    throw new SchemaError(`${where}: row needs string key and label`);
  }
  if (!isObject(row.cells)) throw new SchemaError(`${where}: row.cells missing`);
  for (const col of columns) {
    if (!(col in row.cells)) {
      throw new SchemaError(`${where}: missing cell for column "${col}" (no explicit null marker)`);
    }
    checkCell((row.cells as Record<string, unknown>)[col], `${where}.cells[${col}]`);
  }
  return row as unknown as Row;
}

export function parseSweepTable(data: unknown): SweepTable {
  if (!isObject(data)) throw new SchemaError("input is not a JSON object");
  if (data.schema_version !== SUPPORTED_SCHEMA_VERSION) {
    throw new SchemaError(
      `schema version mismatch: file has ${JSON.stringify(data.schema_version)}, ` +
        `renderer supports ${SUPPORTED_SCHEMA_VERSION}`
    );
  }
  if (data.kind !== "consolidated") {
    throw new SchemaError(`expected kind "consolidated", got ${JSON.stringify(data.kind)}`);
  }
  if (!Array.isArray(data.columns) || data.columns.some((c) => typeof c !== "string")) {
    throw new SchemaError("columns must be a string list");
  }
  const columns = data.columns as string[];
  if (!Array.isArray(data.rows) || data.rows.length === 0) {
    throw new SchemaError("rows must be a non-empty list");
  }
  const rows = data.rows.map((r, i) => checkRow(r, columns, `rows[${i}]`));
  let reference: Row | undefined;
  if (data.reference !== undefined) {
    reference = checkRow(data.reference, columns, "reference");
  }
  return {
    schema_version: data.schema_version as number,
    kind: data.kind as string,
    table: typeof data.table === "string" ? data.table : "unknown",
    metric: typeof data.metric === "string" ? data.metric : "unknown",
    metadata: isObject(data.metadata) ? data.metadata : {},
    columns,
    rows,
    reference,
    reference_key: typeof data.reference_key === "string" ? data.reference_key : undefined,
  };
}
