/**
 * Minimal reader for the trainer's CSV outputs.
 *
 * Both files are plain comma-separated text with one header line and no
 * quoting; absent values are empty fields. Parsing is strict: a body row
 * with the wrong field count is an error, and an empty body is an error
 * (a chart of nothing is a bug upstream, not a chart).
 */

export interface Table {
  columns: string[];
  /** rows[i][j] is null when the field was empty */
  rows: (number | null)[][];
}

export class CsvError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "CsvError";
  }
}

export function parseCsv(text: string, source: string): Table {
  const lines = text.split(/\r?\n/).filter((line) => line.length > 0);
  if (lines.length === 0) {
    throw new CsvError(`${source}: file is empty`);
  }
  const columns = lines[0].split(",");
  if (lines.length === 1) {
    throw new CsvError(`${source}: no data rows`);
  }
  const rows: (number | null)[][] = [];
  for (let i = 1; i < lines.length; i++) {
    const fields = lines[i].split(",");
    if (fields.length !== columns.length) {
      throw new CsvError(
        `${source}: row ${i + 1} has ${fields.length} fields, expected ${columns.length}`,
      );
    }
    rows.push(
      fields.map((f) => {
        if (f === "") return null;
        const v = Number(f);
        if (Number.isNaN(v) && f !== "NaN") {
          // non-numeric payloads (e.g. the loss_kind column) keep a stable
          // numeric slot: hash-free sentinel, the caller reads raw strings
          return null;
        }
        return v;
      }),
    );
  }
  return { columns, rows };
}

/** Raw string view for non-numeric columns (diag.csv loss_kind). */
export function parseCsvRaw(text: string, source: string): { columns: string[]; rows: string[][] } {
  const lines = text.split(/\r?\n/).filter((line) => line.length > 0);
  if (lines.length === 0) {
    throw new CsvError(`${source}: file is empty`);
  }
  const columns = lines[0].split(",");
  if (lines.length === 1) {
    throw new CsvError(`${source}: no data rows`);
  }
  const rows: string[][] = [];
  for (let i = 1; i < lines.length; i++) {
    const fields = lines[i].split(",");
    if (fields.length !== columns.length) {
      throw new CsvError(
        `${source}: row ${i + 1} has ${fields.length} fields, expected ${columns.length}`,
      );
    }
    rows.push(fields);
  }
  return { columns, rows };
}

export function columnIndex(table: { columns: string[] }, name: string, source: string): number {
  const idx = table.columns.indexOf(name);
  if (idx < 0) {
    throw new CsvError(`${source}: missing column '${name}' (have: ${table.columns.join(", ")})`);
  }
  return idx;
}

/** (x, y) pairs from two columns, skipping rows where either side is absent. */
export function pairs(table: Table, xCol: string, yCol: string, source: string): [number, number][] {
  const xi = columnIndex(table, xCol, source);
  const yi = columnIndex(table, yCol, source);
  const out: [number, number][] = [];
  for (const row of table.rows) {
    const x = row[xi];
    const y = row[yi];
    if (x !== null && y !== null) out.push([x, y]);
  }
  return out;
}
