import { ServiceClient } from "./api.js";
import { CompositionDraft } from "./draft.js";
import { pollJob, type PollOptions } from "./poll.js";
import type { CatalogEntry, Job } from "./types.js";

/**
 * DOM-free controller: catalog browsing, draft assembly, job submission
 * with polling, and the result history. The UI layer renders from this.
 */
export class AppController {
  draft!: CompositionDraft;
  private catalog = new Map<number, CatalogEntry[]>();
  private slotCount = 0;

  constructor(
    private readonly client: ServiceClient,
    private readonly pollOptions: PollOptions = {},
  ) {}

  async init(): Promise<void> {
    await this.client.health();
    const page = await this.client.listParts(undefined, 0, 500);
    const maxSlot = page.entries.reduce((m, e) => Math.max(m, e.code.slot), 0);
    this.slotCount = maxSlot + 1;
    for (const entry of page.entries) {
      const bucket = this.catalog.get(entry.code.slot) ?? [];
      bucket.push(entry);
      this.catalog.set(entry.code.slot, bucket);
    }
    this.draft = new CompositionDraft(this.slotCount);
  }

  get slots(): number[] {
    return [...Array(this.slotCount).keys()];
  }

  /** Catalog entries for one slot, in service (paging) order. */
  async browse(slot: number): Promise<CatalogEntry[]> {
    const cached = this.catalog.get(slot);
    if (cached) return cached;
    const page = await this.client.listParts(slot, 0, 500);
    this.catalog.set(slot, page.entries);
    return page.entries;
  }

  thumbnailUrl(imageId: string): string {
    return this.client.imageUrl(imageId);
  }

  /** Submit the draft, poll to completion, append to history. */
  async submitAndPoll(seed = 0): Promise<Job> {
    const composition = this.draft.compositionString();
    const submitted = await this.client.submitJob({
      composition,
      style_suffix: this.draft.style || null,
      seed,
    });
    const job = await pollJob((id) => this.client.getJob(id), submitted.id,
                              this.pollOptions);
    if (!job.result_ref || !job.provenance) {
      throw new Error(`job ${job.id} finished without a result`);
    }
    this.draft.addResult({
      composition: job.provenance.composition,
      imageId: job.result_ref,
      provenance: job.provenance,
    });
    return job;
  }
}
