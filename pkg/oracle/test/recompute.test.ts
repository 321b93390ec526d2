import { describe, expect, test } from "vitest";

import { causalAttention, cdmmoeDense, ropeRotate, ssdRecurrence } from "../src/recompute.js";
import { NdArray } from "../src/tensors.js";

describe("ropeRotate", () => {
  test("position zero is the identity", () => {
    const x = new NdArray([1, 2, 1, 4], Float64Array.from([1, 2, 3, 4, 5, 6, 7, 8]));
    const out = ropeRotate(x, 10000, [0, 0]);
    expect(Array.from(out.data)).toEqual([1, 2, 3, 4, 5, 6, 7, 8]);
  });

  test("first pair rotates by exactly p radians", () => {
    const x = new NdArray([1, 1, 1, 2], Float64Array.from([1, 0]));
    const out = ropeRotate(x, 12345, [2]);
    expect(out.at(0, 0, 0, 0)).toBeCloseTo(Math.cos(2), 12);
    expect(out.at(0, 0, 0, 1)).toBeCloseTo(Math.sin(2), 12);
  });

  test("norms are preserved", () => {
    const x = new NdArray([1, 1, 1, 4], Float64Array.from([3, 4, 1, 2]));
    const out = ropeRotate(x, 100, [7]);
    const n0 = Math.hypot(out.at(0, 0, 0, 0), out.at(0, 0, 0, 1));
    const n1 = Math.hypot(out.at(0, 0, 0, 2), out.at(0, 0, 0, 3));
    expect(n0).toBeCloseTo(5, 10);
    expect(n1).toBeCloseTo(Math.sqrt(5), 10);
  });
});

describe("ssdRecurrence", () => {
  test("all-ones inputs give prefix sums", () => {
    const x = new NdArray([1, 3, 1, 1], Float64Array.from([1, 2, 3]));
    const ones = new NdArray([1, 3, 1, 1], Float64Array.from([1, 1, 1]));
    const a = new NdArray([1, 3, 1], Float64Array.from([1, 1, 1]));
    const y = ssdRecurrence(x, ones, ones, a);
    expect(Array.from(y.data)).toEqual([1, 3, 6]);
  });

  test("constant gate decays an impulse geometrically", () => {
    const l = 6;
    const c = 0.5;
    const x = new NdArray([1, l, 1, 1]);
    x.set(1, 0, 0, 0, 0);
    const ones = new NdArray([1, l, 1, 1], Float64Array.from(Array(l).fill(1)));
    const a = new NdArray([1, l, 1], Float64Array.from(Array(l).fill(c)));
    const y = ssdRecurrence(x, ones, ones, a);
    for (let t = 0; t < l; t++) {
      expect(y.at(0, t, 0, 0)).toBeCloseTo(Math.pow(c, t), 12);
    }
  });
});

describe("causalAttention", () => {
  test("single position attends to itself", () => {
    const q = new NdArray([1, 1, 1, 2], Float64Array.from([1, 2]));
    const v = new NdArray([1, 1, 1, 2], Float64Array.from([5, -1]));
    const { y, attn } = causalAttention(q, q, v, 0.5);
    expect(attn.at(0, 0, 0, 0)).toBe(1);
    expect(Array.from(y.data)).toEqual([5, -1]);
  });

  test("equal scores average the prefix", () => {
    const l = 4;
    const q = new NdArray([1, 1, l, 1]);
    const k = new NdArray([1, 1, l, 1]);
    const v = new NdArray([1, 1, l, 1], Float64Array.from([1, 2, 3, 4]));
    const { y } = causalAttention(q, k, v, 1);
    expect(y.at(0, 0, 3, 0)).toBeCloseTo(2.5, 12);
    expect(y.at(0, 0, 1, 0)).toBeCloseTo(1.5, 12);
  });

  test("rows sum to one", () => {
    const l = 5;
    const rand = () => Math.sin(Math.random() * 100);
    const q = new NdArray([1, 1, l, 3], Float64Array.from({ length: l * 3 }, rand));
    const k = new NdArray([1, 1, l, 3], Float64Array.from({ length: l * 3 }, rand));
    const v = new NdArray([1, 1, l, 3], Float64Array.from({ length: l * 3 }, rand));
    const { attn } = causalAttention(q, k, v, 0.7);
    for (let i = 0; i < l; i++) {
      let sum = 0;
      for (let j = 0; j < l; j++) sum += attn.at(0, 0, i, j);
      expect(sum).toBeCloseTo(1, 9);
    }
  });
});

describe("cdmmoeDense", () => {
  test("zero expert outputs leave only the shared path", () => {
    const dModel = 2;
    const w = {
      W_s: new NdArray([2, 3], Float64Array.from([1, 0, 1, 0, 1, 1])),
      V_s: new NdArray([2, 3], Float64Array.from([1, 1, 0, 0, 1, 0])),
      W2_s: new NdArray([3, 2], Float64Array.from([1, 0, 0, 1, 1, 1])),
      W_in: new NdArray([3, 2], Float64Array.from([1, 0, 0, 1, 0, 0])),
      W_query: new NdArray([2, 2], Float64Array.from([1, 0, 0, 1])),
      key1: new NdArray([2, 1], Float64Array.from([0.5, -0.5])),
      key2: new NdArray([2, 1], Float64Array.from([0.25, -0.25])),
      expert_w: new NdArray([4, 2], Float64Array.from([1, 1, 1, 1, 1, 1, 1, 1])),
      expert_v: new NdArray([4, 2], Float64Array.from([1, 1, 1, 1, 1, 1, 1, 1])),
      expert_u: new NdArray([4, 2]),
    };
    const x = new NdArray([1, 1, dModel], Float64Array.from([1, -1]));
    const y = cdmmoeDense(x, w, 2);
    // shared path only: gated = (x W_s) * silu(x V_s); y = gated W2_s
    const silu = (z: number) => z / (1 + Math.exp(-z));
    const lin = [1 * 1 + -1 * 0, 0 + -1, 1 + -1 * 0];
    const gate = [1 + 0, 1 - 1, 0 + 0].map(silu);
    const gated = lin.map((v, i) => v * gate[i]);
    const want = [gated[0] + gated[2], gated[1] + gated[2]];
    expect(y.at(0, 0, 0)).toBeCloseTo(want[0], 12);
    expect(y.at(0, 0, 1)).toBeCloseTo(want[1], 12);
  });
});
