/** Case runner: recompute every case and compare against the expected
 * tensors at the case tolerance. */

import { readFileSync } from "node:fs";

import { parseVectorFile, type VectorCase } from "./schema.js";
import { recomputeCase, type CaseReport } from "./recompute.js";
import { NdArray, maxAbsDiff, maxRelDiff } from "./tensors.js";

export function verifyCase(c: VectorCase): CaseReport {
  const got = recomputeCase(c);
  let maxAbs = 0;
  let maxRel = 0;
  let worstIndex = -1;
  for (const [name, expected] of Object.entries(c.expected)) {
    if (!(name in got)) {
      throw new Error(`case ${c.name}: recomputation produced no tensor named ${name}`);
    }
    const want = NdArray.fromJson(expected);
    const { err, at } = maxAbsDiff(got[name], want);
    if (err > maxAbs) {
      maxAbs = err;
      worstIndex = at;
    }
    maxRel = Math.max(maxRel, maxRelDiff(got[name], want));
  }
  return {
    name: c.name,
    kind: c.kind,
    tolerance: c.tolerance,
    maxAbsErr: maxAbs,
    maxRelErr: maxRel,
    worstIndex,
    pass: maxAbs <= c.tolerance,
  };
}

export function verifyFile(path: string): CaseReport[] {
  const doc = parseVectorFile(readFileSync(path, "utf8"));
  return doc.cases.map(verifyCase);
}

export function formatReport(reports: CaseReport[]): string {
  const lines = reports.map(
    (r) =>
      `[${r.pass ? "PASS" : "FAIL"}] ${r.name.padEnd(18)} abs=${r.maxAbsErr.toExponential(2)} ` +
      `rel=${r.maxRelErr.toExponential(2)} tol=${r.tolerance.toExponential(0)}` +
      (r.pass ? "" : ` worst flat index ${r.worstIndex}`),
  );
  const failed = reports.filter((r) => !r.pass).length;
  lines.push(`${reports.length - failed}/${reports.length} cases verified`);
  return lines.join("\n");
}
