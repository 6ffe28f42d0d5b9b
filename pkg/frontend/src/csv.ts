import { readFileSync } from "node:fs";
import Papa from "papaparse";

/** A parsed simulator artifact: header metadata plus typed rows. */
export interface ArtifactTable {
  path: string;
  columns: string[];
  rows: Record<string, number>[];
  /** `# key: value` comment lines from the artifact header. */
  meta: Record<string, string>;
}

export class SchemaError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "SchemaError";
  }
}

/**
 * Read a polsim CSV artifact. Leading `#` lines carry the reproducibility
 * header (config, master seed) and are exposed as metadata; everything else
 * is parsed as a numeric table.
 */
export function readArtifact(path: string): ArtifactTable {
  const raw = readFileSync(path, "utf8");
  const meta: Record<string, string> = {};
  const dataLines: string[] = [];
  for (const line of raw.split(/\r?\n/)) {
    if (line.startsWith("#")) {
      const m = line.match(/^#\s*([^:]+):\s*(.*)$/);
      if (m) meta[m[1].trim()] = m[2];
    } else if (line.trim() !== "") {
      dataLines.push(line);
    }
  }
  if (dataLines.length === 0) {
    throw new SchemaError(`${path}: empty artifact (no header row)`);
  }
  const parsed = Papa.parse<Record<string, string>>(dataLines.join("\n"), {
    header: true,
    skipEmptyLines: true,
  });
  if (parsed.errors.length > 0) {
    throw new SchemaError(`${path}: ${parsed.errors[0].message}`);
  }
  const columns = (parsed.meta.fields ?? []).map((c) => c.trim());
  const rows = parsed.data.map((record) => {
    const out: Record<string, number> = {};
    for (const col of columns) {
      out[col] = Number(record[col]);
    }
    return out;
  });
  if (rows.length === 0) {
    throw new SchemaError(`${path}: no data rows`);
  }
  return { path, columns, rows, meta };
}

/** Assert the table carries every required column, naming the first missing one. */
export function requireColumns(table: ArtifactTable, needed: string[]): void {
  for (const col of needed) {
    if (!table.columns.includes(col)) {
      throw new SchemaError(`${table.path}: missing column "${col}"`);
    }
  }
}

export function column(table: ArtifactTable, name: string): number[] {
  requireColumns(table, [name]);
  return table.rows.map((r) => r[name]);
}
