import { formatComposition, parseComposition } from "./types.js";
import type { Provenance } from "./types.js";

export interface HistoryEntry {
  composition: string;
  imageId: string;
  provenance: Provenance;
}

/**
 * The composition the user is assembling: one variant per slot, an
 * optional style suffix, and the history of generated results. All UI
 * state derives from service responses plus this draft.
 */
export class CompositionDraft {
  readonly selected = new Map<number, number>();
  style = "";
  readonly history: HistoryEntry[] = [];

  constructor(readonly slotCount: number) {
    if (slotCount < 1) throw new Error("slotCount must be >= 1");
  }

  selectVariant(slot: number, variant: number): void {
    this.assertSlot(slot);
    if (!Number.isInteger(variant) || variant < 1) {
      throw new Error(`variant must be a positive integer, got ${variant}`);
    }
    this.selected.set(slot, variant);
  }

  clearSlot(slot: number): void {
    this.assertSlot(slot);
    this.selected.delete(slot);
  }

  selectionFor(slot: number): number | undefined {
    return this.selected.get(slot);
  }

  /** Fill every unselected slot with a default variant. */
  fillDefaults(variant = 1): void {
    for (let slot = 0; slot < this.slotCount; slot++) {
      if (!this.selected.has(slot)) this.selected.set(slot, variant);
    }
  }

  /** Submission is allowed only once every slot has a choice. */
  canSubmit(): boolean {
    for (let slot = 0; slot < this.slotCount; slot++) {
      if (!this.selected.has(slot)) return false;
    }
    return true;
  }

  compositionString(): string {
    if (!this.canSubmit()) {
      const missing = [];
      for (let slot = 0; slot < this.slotCount; slot++) {
        if (!this.selected.has(slot)) missing.push(slot);
      }
      throw new Error(`slots without a selection: ${missing.join(", ")}`);
    }
    return formatComposition(this.selected);
  }

  addResult(entry: HistoryEntry): void {
    this.history.push(entry);
  }

  /**
   * Copy one slot's code from a previous result's provenance into the
   * draft ("swap from history").
   */
  swapFromHistory(historyIndex: number, slot: number): void {
    const entry = this.history[historyIndex];
    if (!entry) throw new Error(`no history entry ${historyIndex}`);
    this.assertSlot(slot);
    const codes = parseComposition(entry.provenance.composition);
    const variant = codes.get(slot);
    if (variant === undefined || variant === 0) {
      throw new Error(`history entry has no usable code for slot ${slot}`);
    }
    this.selected.set(slot, variant);
  }

  private assertSlot(slot: number): void {
    if (!Number.isInteger(slot) || slot < 0 || slot >= this.slotCount) {
      throw new Error(`slot ${slot} outside [0, ${this.slotCount - 1}]`);
    }
  }
}
