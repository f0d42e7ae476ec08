import type { AppController } from "./app.js";
import type { CatalogEntry } from "./types.js";

/** Minimal DOM rendering over the controller; state lives in the draft. */
export class AppView {
  private activeSlot = 0;
  private busy = false;

  constructor(
    private readonly root: HTMLElement,
    private readonly controller: AppController,
  ) {}

  async mount(): Promise<void> {
    this.root.innerHTML = `
      <header><h1>part picker</h1><div id="banner"></div></header>
      <nav id="slots"></nav>
      <section id="grid" class="grid"></section>
      <section id="composer">
        <div id="selection"></div>
        <input id="style" placeholder="style suffix (optional)" />
        <input id="seed" type="number" value="0" title="seed" />
        <button id="submit" disabled>generate</button>
      </section>
      <section id="history"><h2>history</h2><div id="results"></div></section>
    `;
    try {
      await this.controller.init();
    } catch (err) {
      this.showBanner(`service unreachable - retrying... (${String(err)})`);
      setTimeout(() => void this.mount(), 2000);
      return;
    }
    this.showBanner("");
    this.renderSlotTabs();
    await this.renderGrid();
    this.wireComposer();
    this.renderSelection();
  }

  private showBanner(text: string): void {
    const banner = this.root.querySelector<HTMLElement>("#banner")!;
    banner.textContent = text;
    banner.style.display = text ? "block" : "none";
  }

  private renderSlotTabs(): void {
    const nav = this.root.querySelector<HTMLElement>("#slots")!;
    nav.innerHTML = "";
    for (const slot of this.controller.slots) {
      const button = document.createElement("button");
      button.textContent = slot === 0 ? "background" : `part ${slot}`;
      button.className = slot === this.activeSlot ? "tab active" : "tab";
      button.onclick = () => {
        this.activeSlot = slot;
        this.renderSlotTabs();
        void this.renderGrid();
      };
      nav.appendChild(button);
    }
  }

  private async renderGrid(): Promise<void> {
    const grid = this.root.querySelector<HTMLElement>("#grid")!;
    let entries: CatalogEntry[];
    try {
      entries = await this.controller.browse(this.activeSlot);
    } catch (err) {
      this.showBanner(`catalog load failed: ${String(err)}`);
      return;
    }
    grid.innerHTML = "";
    const chosen = this.controller.draft.selectionFor(this.activeSlot);
    for (const entry of entries) {
      const card = document.createElement("figure");
      card.className = entry.code.variant === chosen ? "card selected" : "card";
      const thumb = entry.exemplar_image_ids[0];
      if (thumb) {
        const img = document.createElement("img");
        img.loading = "lazy"; // thumbnails lazy-load in catalog order
        img.src = this.controller.thumbnailUrl(thumb);
        card.appendChild(img);
      }
      const caption = document.createElement("figcaption");
      caption.textContent = entry.label_hint ?? `variant ${entry.code.variant}`;
      card.appendChild(caption);
      card.onclick = () => {
        this.controller.draft.selectVariant(entry.code.slot, entry.code.variant);
        this.renderSelection();
        void this.renderGrid();
      };
      grid.appendChild(card);
    }
  }

  private renderSelection(): void {
    const box = this.root.querySelector<HTMLElement>("#selection")!;
    const draft = this.controller.draft;
    box.textContent = this.controller.slots
      .map((s) => `${s}:${draft.selectionFor(s) ?? "-"}`)
      .join("  ");
    const submit = this.root.querySelector<HTMLButtonElement>("#submit")!;
    submit.disabled = this.busy || !draft.canSubmit();
  }

  private wireComposer(): void {
    const style = this.root.querySelector<HTMLInputElement>("#style")!;
    style.oninput = () => {
      this.controller.draft.style = style.value;
    };
    const submit = this.root.querySelector<HTMLButtonElement>("#submit")!;
    submit.onclick = () => void this.submit();
  }

  private async submit(): Promise<void> {
    const seedInput = this.root.querySelector<HTMLInputElement>("#seed")!;
    this.busy = true;
    this.renderSelection();
    this.showBanner("generating...");
    try {
      await this.controller.submitAndPoll(Number(seedInput.value) || 0);
      this.showBanner("");
      this.renderHistory();
    } catch (err) {
      this.showBanner(`generation failed: ${String(err)}`);
    } finally {
      this.busy = false;
      this.renderSelection();
    }
  }

  private renderHistory(): void {
    const results = this.root.querySelector<HTMLElement>("#results")!;
    results.innerHTML = "";
    this.controller.draft.history.forEach((entry, index) => {
      const card = document.createElement("figure");
      card.className = "card";
      const img = document.createElement("img");
      img.src = this.controller.thumbnailUrl(entry.imageId);
      card.appendChild(img);
      const caption = document.createElement("figcaption");
      caption.textContent = entry.composition;
      card.appendChild(caption);
      for (const slot of this.controller.slots) {
        const swap = document.createElement("button");
        swap.textContent = `take ${slot === 0 ? "bg" : `p${slot}`}`;
        swap.onclick = () => {
          this.controller.draft.swapFromHistory(index, slot);
          this.renderSelection();
          void this.renderGrid();
        };
        card.appendChild(swap);
      }
      results.appendChild(card);
    });
  }
}
