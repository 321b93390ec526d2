/* echarts ships no "types" conditions for its subpath exports, so NodeNext
 * resolution cannot see them; declare the minimal surface used here. */

declare module "echarts/core" {
  export interface SsrChart {
    setOption(option: unknown): void;
    renderToSVGString(): string;
    dispose(): void;
  }
  export function init(
    dom: null,
    theme: null,
    opts: { renderer: "svg"; ssr: boolean; width: number; height: number },
  ): SsrChart;
  export function use(extensions: unknown[]): void;
}

declare module "echarts/charts" {
  export const LineChart: unknown;
}

declare module "echarts/components" {
  export const GridComponent: unknown;
  export const LegendComponent: unknown;
  export const TitleComponent: unknown;
}

declare module "echarts/renderers" {
  export const SVGRenderer: unknown;
}
