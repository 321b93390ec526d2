/** Run-artifact CSVs: an optional `# config_hash=` comment line, then a
 * header that must match the producing side exactly. */

export const METRICS_HEADER = "step,lr,loss,acc,tok_per_s";
export const BENCH_HEADER = "kind,seq_len,fwd_ms,fwdbwd_ms,tok_per_s";

export interface CsvTable {
  header: string[];
  rows: Record<string, string>[];
  configHash?: string;
}

export function parseCsv(text: string, expectedHeader: string): CsvTable {
  const lines = text.split(/\r?\n/).filter((l) => l.length > 0);
  let configHash: string | undefined;
  let start = 0;
  if (lines[0]?.startsWith("#")) {
    const m = lines[0].match(/config_hash=(\w+)/);
    configHash = m?.[1];
    start = 1;
  }
  const headerLine = lines[start];
  if (headerLine !== expectedHeader) {
    const got = (headerLine ?? "").split(",");
    const want = expectedHeader.split(",");
    const bad = want.find((c, i) => got[i] !== c) ?? want[0];
    throw new Error(`csv header mismatch: expected column "${bad}" (header was "${headerLine ?? ""}")`);
  }
  const header = expectedHeader.split(",");
  const rows = lines.slice(start + 1).map((line) => {
    const cells = line.split(",");
    return Object.fromEntries(header.map((h, i) => [h, cells[i]]));
  });
  if (rows.length === 0) {
    throw new Error("csv has a header but no data rows");
  }
  return { header, rows, configHash };
}

export function numericColumn(table: CsvTable, name: string): number[] {
  if (!table.header.includes(name)) {
    throw new Error(`csv column not found: ${name}`);
  }
  return table.rows.map((r) => Number(r[name]));
}
