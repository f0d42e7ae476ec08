export interface PartCode {
  slot: number;
  variant: number;
}

export interface CatalogEntry {
  code: PartCode;
  exemplar_image_ids: string[];
  label_hint: string | null;
}

export interface CatalogPage {
  schema_version: number;
  entries: CatalogEntry[];
  page: number;
  page_size: number;
  total: number;
}

export interface Provenance {
  composition: string;
  style_suffix: string | null;
  seed: number;
  steps: number;
  guidance: number;
  checkpoint_id: string;
  template: string;
}

export type JobStatus = "queued" | "running" | "done" | "failed";

export interface Job {
  id: string;
  status: JobStatus;
  result_ref: string | null;
  error: string | null;
  provenance?: Provenance | null;
}

export interface JobRequest {
  composition: string;
  style_suffix?: string | null;
  seed?: number;
  steps?: number;
  guidance?: number;
}

/** Parse "0:1,1:4,..." into a slot -> variant map. */
export function parseComposition(text: string): Map<number, number> {
  const out = new Map<number, number>();
  for (const piece of text.split(",")) {
    const [slot, variant] = piece.split(":").map(Number);
    if (!Number.isInteger(slot) || !Number.isInteger(variant)) {
      throw new Error(`bad composition fragment: ${piece}`);
    }
    out.set(slot, variant);
  }
  return out;
}

export function formatComposition(selected: Map<number, number>): string {
  const slots = [...selected.keys()].sort((a, b) => a - b);
  return slots.map((s) => `${s}:${selected.get(s)}`).join(",");
}
