/** Minimal dense-tensor plumbing for the recomputation routines.
 *
 * Values travel as flat Float64Arrays plus a shape; indexing helpers keep
 * the loop code readable. Nothing here is shared with the implementation
 * under test — that is the point.
 */

export interface TensorJson {
  shape: number[];
  data: number[];
}

export class NdArray {
  readonly shape: number[];
  readonly data: Float64Array;
  private readonly strides: number[];

  constructor(shape: number[], data?: Float64Array) {
    this.shape = [...shape];
    const size = shape.reduce((a, b) => a * b, 1);
    this.data = data ?? new Float64Array(size);
    if (this.data.length !== size) {
      throw new Error(`data length ${this.data.length} does not match shape ${shape}`);
    }
    this.strides = new Array(shape.length);
    let s = 1;
    for (let i = shape.length - 1; i >= 0; i--) {
      this.strides[i] = s;
      s *= shape[i];
    }
  }

  static fromJson(t: TensorJson): NdArray {
    return new NdArray(t.shape, Float64Array.from(t.data));
  }

  at(...idx: number[]): number {
    return this.data[this.offset(idx)];
  }

  set(value: number, ...idx: number[]): void {
    this.data[this.offset(idx)] = value;
  }

  add(value: number, ...idx: number[]): void {
    this.data[this.offset(idx)] += value;
  }

  private offset(idx: number[]): number {
    if (idx.length !== this.shape.length) {
      throw new Error(`rank mismatch: ${idx.length} vs ${this.shape.length}`);
    }
    let off = 0;
    for (let i = 0; i < idx.length; i++) {
      if (idx[i] < 0 || idx[i] >= this.shape[i]) {
        throw new Error(`index ${idx} out of bounds for ${this.shape}`);
      }
      off += idx[i] * this.strides[i];
    }
    return off;
  }
}

export function maxAbsDiff(a: NdArray, b: NdArray): { err: number; at: number } {
  if (a.data.length !== b.data.length) {
    throw new Error(`size mismatch: ${a.shape} vs ${b.shape}`);
  }
  let worst = 0;
  let at = -1;
  for (let i = 0; i < a.data.length; i++) {
    const d = Math.abs(a.data[i] - b.data[i]);
    if (d > worst) {
      worst = d;
      at = i;
    }
  }
  return { err: worst, at };
}

export function maxRelDiff(a: NdArray, b: NdArray): number {
  let worst = 0;
  for (let i = 0; i < a.data.length; i++) {
    const denom = Math.max(Math.abs(a.data[i]), Math.abs(b.data[i]), 1e-12);
    worst = Math.max(worst, Math.abs(a.data[i] - b.data[i]) / denom);
  }
  return worst;
}
