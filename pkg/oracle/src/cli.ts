/** oracle CLI: `verify <vectors.json>` and `plot <csv...> --out <dir>`.
 * Exit status is nonzero iff any verification case fails. */

import { formatReport, verifyFile } from "./verify.js";
import { plotBench, plotMetrics } from "./plot.js";

function main(argv: string[]): number {
  const [command, ...rest] = argv;
  if (command === "verify") {
    if (rest.length !== 1) {
      console.error("usage: verify <vectors.json>");
      return 2;
    }
    const reports = verifyFile(rest[0]);
    console.log(formatReport(reports));
    return reports.every((r) => r.pass) ? 0 : 1;
  }
  if (command === "plot") {
    const outIdx = rest.indexOf("--out");
    const outDir = outIdx >= 0 ? rest[outIdx + 1] : "plots";
    const inputs = rest.filter((a, i) => a !== "--out" && i !== outIdx + 1);
    if (inputs.length === 0) {
      console.error("usage: plot <metrics.csv|bench.csv ...> --out <dir>");
      return 2;
    }
    for (const input of inputs) {
      const files = input.includes("bench")
        ? [plotBench(input, outDir)]
        : plotMetrics(input, outDir);
      for (const f of files) {
        console.log(`wrote ${f}`);
      }
    }
    return 0;
  }
  console.error("usage: cli <verify|plot> ...");
  return 2;
}

process.exit(main(process.argv.slice(2)));
