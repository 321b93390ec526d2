/** Chart emission: training curves and a log-log throughput chart with
 * fitted scaling exponents. Rendered server-side to SVG. */

import { mkdirSync, readFileSync, writeFileSync } from "node:fs";
import { dirname, join } from "node:path";

import { init, use } from "echarts/core";
import { LineChart } from "echarts/charts";
import { GridComponent, LegendComponent, TitleComponent } from "echarts/components";
import { SVGRenderer } from "echarts/renderers";

import { BENCH_HEADER, METRICS_HEADER, numericColumn, parseCsv } from "./csv.js";

use([LineChart, GridComponent, LegendComponent, TitleComponent, SVGRenderer]);

interface ChartOption {
  title?: { text: string; subtext?: string };
  legend?: { top?: number };
  grid?: { top?: number };
  xAxis: { type: "value" | "log"; name?: string };
  yAxis: { type: "value" | "log"; name?: string };
  series: Array<{
    name?: string;
    type: "line";
    showSymbol?: boolean;
    data: Array<[number, number]>;
  }>;
}

function renderSvg(option: ChartOption, width = 840, height = 520): string {
  const chart = init(null, null, { renderer: "svg", ssr: true, width, height });
  chart.setOption(option);
  const svg = chart.renderToSVGString();
  chart.dispose();
  return svg;
}

/** Least-squares slope of log(y) against log(x). */
export function logLogSlope(x: number[], y: number[]): number {
  const lx = x.map(Math.log);
  const ly = y.map(Math.log);
  const mx = lx.reduce((a, b) => a + b, 0) / lx.length;
  const my = ly.reduce((a, b) => a + b, 0) / ly.length;
  let num = 0;
  let den = 0;
  for (let i = 0; i < lx.length; i++) {
    num += (lx[i] - mx) * (ly[i] - my);
    den += (lx[i] - mx) ** 2;
  }
  return num / den;
}

export function plotMetrics(csvPath: string, outDir: string): string[] {
  const table = parseCsv(readFileSync(csvPath, "utf8"), METRICS_HEADER);
  const steps = numericColumn(table, "step");
  const files: string[] = [];
  const curves: Array<[string, string]> = [
    ["loss", "training loss"],
    ["acc", "masked accuracy"],
  ];
  for (const [col, title] of curves) {
    const svg = renderSvg({
      title: { text: title, subtext: table.configHash ? `config ${table.configHash}` : "" },
      xAxis: { type: "value", name: "step" },
      yAxis: { type: "value", name: col },
      series: [{
        type: "line",
        showSymbol: false,
        data: steps.map((s, i) => [s, numericColumn(table, col)[i]]),
      }],
    });
    const path = join(outDir, `${col}.svg`);
    mkdirSync(dirname(path), { recursive: true });
    writeFileSync(path, svg);
    files.push(path);
  }
  return files;
}

export interface BenchSlopes {
  [kind: string]: number;
}

export function benchSlopes(csvPath: string): BenchSlopes {
  const table = parseCsv(readFileSync(csvPath, "utf8"), BENCH_HEADER);
  const byKind: Record<string, { l: number[]; t: number[] }> = {};
  for (const row of table.rows) {
    const kind = row.kind;
    byKind[kind] ??= { l: [], t: [] };
    byKind[kind].l.push(Number(row.seq_len));
    byKind[kind].t.push(Number(row.fwdbwd_ms));
  }
  const slopes: BenchSlopes = {};
  for (const [kind, { l, t }] of Object.entries(byKind)) {
    slopes[kind] = logLogSlope(l, t);
  }
  return slopes;
}

export function plotBench(csvPath: string, outDir: string): string {
  const table = parseCsv(readFileSync(csvPath, "utf8"), BENCH_HEADER);
  const slopes = benchSlopes(csvPath);
  const byKind: Record<string, Array<[number, number]>> = {};
  for (const row of table.rows) {
    byKind[row.kind] ??= [];
    byKind[row.kind].push([Number(row.seq_len), Number(row.tok_per_s)]);
  }
  const svg = renderSvg({
    title: {
      text: "throughput vs sequence length",
      subtext: Object.entries(slopes)
        .map(([k, s]) => `${k}: time ~ L^${s.toFixed(2)}`)
        .join("    "),
    },
    legend: { top: 50 },
    grid: { top: 90 },
    xAxis: { type: "log", name: "sequence length" },
    yAxis: { type: "log", name: "tokens / s" },
    series: Object.entries(byKind).map(([kind, data]) => ({
      name: kind,
      type: "line",
      data,
    })),
  });
  const path = join(outDir, "throughput.svg");
  mkdirSync(dirname(path), { recursive: true });
  writeFileSync(path, svg);
  return path;
}
