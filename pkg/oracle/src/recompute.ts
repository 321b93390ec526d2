/** Definition-level recomputation of every exported case kind.
 *
 * Each routine works from first principles with explicit loops: rotations
 * are applied pair by pair, the state-space output comes from stepping
 * the recurrence, attention rows are built one query at a time, and the
 * expert mixture scores all N experts before discarding the unchosen.
 */

import { NdArray } from "./tensors.js";
import type { VectorCase } from "./schema.js";

export function ropeRotate(x: NdArray, baseN: number, positions: number[]): NdArray {
  const [b, l, h, d] = x.shape;
  const out = new NdArray(x.shape, Float64Array.from(x.data));
  for (let bi = 0; bi < b; bi++) {
    for (let t = 0; t < l; t++) {
      const p = positions[t];
      for (let hi = 0; hi < h; hi++) {
        for (let i = 0; i < d / 2; i++) {
          const theta = Math.pow(baseN, (-2 * i) / d);
          const c = Math.cos(p * theta);
          const s = Math.sin(p * theta);
          const even = out.at(bi, t, hi, 2 * i);
          const odd = out.at(bi, t, hi, 2 * i + 1);
          out.set(even * c - odd * s, bi, t, hi, 2 * i);
          out.set(even * s + odd * c, bi, t, hi, 2 * i + 1);
        }
      }
    }
  }
  return out;
}

/** h_t = a_t * h_{t-1} + B_t x_t^T ; y_t = C_t h_t */
export function ssdRecurrence(x: NdArray, B: NdArray, C: NdArray, a: NdArray): NdArray {
  const [b, l, h, p] = x.shape;
  const s = B.shape[3];
  const y = new NdArray([b, l, h, p]);
  for (let bi = 0; bi < b; bi++) {
    for (let hi = 0; hi < h; hi++) {
      const state = new NdArray([s, p]);
      for (let t = 0; t < l; t++) {
        const gate = a.at(bi, t, hi);
        for (let si = 0; si < s; si++) {
          for (let pi = 0; pi < p; pi++) {
            state.set(gate * state.at(si, pi) + B.at(bi, t, hi, si) * x.at(bi, t, hi, pi), si, pi);
          }
        }
        for (let pi = 0; pi < p; pi++) {
          let acc = 0;
          for (let si = 0; si < s; si++) {
            acc += C.at(bi, t, hi, si) * state.at(si, pi);
          }
          y.set(acc, bi, t, hi, pi);
        }
      }
    }
  }
  return y;
}

/** Masked softmax(q k^T * scale) v, one query row at a time. q,k,v are [b, h, l, hd]. */
export function causalAttention(
  q: NdArray,
  k: NdArray,
  v: NdArray,
  scale: number,
): { y: NdArray; attn: NdArray } {
  const [b, h, l, hd] = q.shape;
  const y = new NdArray([b, h, l, hd]);
  const attn = new NdArray([b, h, l, l]);
  for (let bi = 0; bi < b; bi++) {
    for (let hi = 0; hi < h; hi++) {
      for (let i = 0; i < l; i++) {
        const scores: number[] = [];
        for (let j = 0; j <= i; j++) {
          let dot = 0;
          for (let c = 0; c < hd; c++) {
            dot += q.at(bi, hi, i, c) * k.at(bi, hi, j, c);
          }
          scores.push(dot * scale);
        }
        const m = Math.max(...scores);
        const weights = scores.map((sc) => Math.exp(sc - m));
        const denom = weights.reduce((acc, w) => acc + w, 0);
        for (let j = 0; j <= i; j++) {
          attn.set(weights[j] / denom, bi, hi, i, j);
          for (let c = 0; c < hd; c++) {
            y.add((weights[j] / denom) * v.at(bi, hi, j, c), bi, hi, i, c);
          }
        }
      }
    }
  }
  return { y, attn };
}

function silu(z: number): number {
  return z / (1 + Math.exp(-z));
}

function matVec(x: Float64Array, w: NdArray): Float64Array {
  const [rows, cols] = w.shape;
  const out = new Float64Array(cols);
  for (let j = 0; j < cols; j++) {
    let acc = 0;
    for (let i = 0; i < rows; i++) {
      acc += x[i] * w.at(i, j);
    }
    out[j] = acc;
  }
  return out;
}

/** Dense mixture evaluation: all N experts scored, the non-retrieved zeroed. */
export function cdmmoeDense(x: NdArray, w: Record<string, NdArray>, topK: number): NdArray {
  const [b, l, dModel] = x.shape;
  const n = w.expert_w.shape[0];
  const r = Math.round(Math.sqrt(n));
  const out = new NdArray([b, l, dModel]);
  for (let bi = 0; bi < b; bi++) {
    for (let t = 0; t < l; t++) {
      const xv = x.data.subarray((bi * l + t) * dModel, (bi * l + t) * dModel + dModel);
      const lin = matVec(Float64Array.from(xv), w.W_s);
      const gateIn = matVec(Float64Array.from(xv), w.V_s);
      const gated = lin.map((v, i) => v * silu(gateIn[i]));
      const xp = matVec(gated, w.W_in);
      const qv = matVec(xp, w.W_query);
      const half = qv.length / 2;

      const scores = new Float64Array(n);
      for (let e = 0; e < n; e++) {
        const i1 = Math.floor(e / r);
        const i2 = e % r;
        let s1 = 0;
        let s2 = 0;
        for (let c = 0; c < half; c++) {
          s1 += qv[c] * w.key1.at(i1, c);
          s2 += qv[half + c] * w.key2.at(i2, c);
        }
        scores[e] = s1 + s2;
      }
      // top-k with ties to the lowest index: stable sort on descending score
      const order = Array.from({ length: n }, (_, i) => i).sort(
        (i, j) => scores[j] - scores[i] || i - j,
      );
      const chosen = order.slice(0, topK);
      const m = Math.max(...chosen.map((e) => scores[e]));
      const gateWeights = chosen.map((e) => Math.exp(scores[e] - m));
      const denom = gateWeights.reduce((acc, g) => acc + g, 0);

      const acc = new Float64Array(dModel);
      chosen.forEach((e, rank) => {
        let hw = 0;
        let hv = 0;
        for (let c = 0; c < xp.length; c++) {
          hw += xp[c] * w.expert_w.at(e, c);
          hv += xp[c] * w.expert_v.at(e, c);
        }
        const activation = hw * silu(hv) * (gateWeights[rank] / denom);
        for (let c = 0; c < dModel; c++) {
          acc[c] += activation * w.expert_u.at(e, c);
        }
      });
      const shared = matVec(gated, w.W2_s);
      for (let c = 0; c < dModel; c++) {
        out.set(acc[c] + shared[c], bi, t, c);
      }
    }
  }
  return out;
}

export interface CaseReport {
  name: string;
  kind: string;
  tolerance: number;
  maxAbsErr: number;
  maxRelErr: number;
  worstIndex: number;
  pass: boolean;
}

export function recomputeCase(c: VectorCase): Record<string, NdArray> {
  const inp = Object.fromEntries(
    Object.entries(c.inputs).map(([k, v]) => [k, NdArray.fromJson(v)]),
  );
  switch (c.kind) {
    case "rope":
      return { y: ropeRotate(inp.x, c.params.base_n, Array.from(inp.positions.data)) };
    case "ssd":
      return { y: ssdRecurrence(inp.x, inp.B, inp.C, inp.a) };
    case "attention": {
      const { y, attn } = causalAttention(inp.q, inp.k, inp.v, c.params.scale);
      return { y, attn };
    }
    case "cdmmoe":
      return { y: cdmmoeDense(inp.x, inp, c.params.top_k) };
  }
}
