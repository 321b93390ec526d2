/** Vector-file schema. Violations surface as named parse errors. */

import { z } from "zod";

const tensorSchema = z
  .object({
    shape: z.array(z.number().int().nonnegative()),
    data: z.array(z.number()),
  })
  .refine((t) => t.data.length === t.shape.reduce((a, b) => a * b, 1), {
    message: "data length does not match shape product",
  });

export const caseSchema = z.object({
  name: z.string(),
  kind: z.enum(["rope", "ssd", "attention", "cdmmoe"]),
  tolerance: z.number().positive(),
  params: z.record(z.number()).default({}),
  inputs: z.record(tensorSchema),
  expected: z.record(tensorSchema),
});

export const vectorFileSchema = z.object({
  version: z.literal(1),
  seed: z.number().int(),
  cases: z.array(caseSchema),
});

export type VectorCase = z.infer<typeof caseSchema>;
export type VectorFile = z.infer<typeof vectorFileSchema>;

export function parseVectorFile(jsonText: string): VectorFile {
  let raw: unknown;
  try {
    raw = JSON.parse(jsonText);
  } catch (e) {
    throw new Error(`vector file is not valid JSON: ${(e as Error).message}`);
  }
  const result = vectorFileSchema.safeParse(raw);
  if (!result.success) {
    const issue = result.error.issues[0];
    throw new Error(`vector file schema violation at ${issue.path.join(".")}: ${issue.message}`);
  }
  return result.data;
}
