import { ApiError, describeError, ReviewClient } from "./api.js";
import {
  subsetTarget,
  type FinalizeRequest,
  type InsufficientPoolBody,
  type ProgressMap,
} from "./types.js";

export interface ProgressPanelOptions {
  client: ReviewClient;
  defaults?: Partial<FinalizeRequest>;
}

function isInsufficient(body: unknown): body is InsufficientPoolBody {
  return (
    typeof body === "object" &&
    body !== null &&
    (body as { error?: unknown }).error === "insufficient_pool"
  );
}

/**
 * Kept/pending/rejected counts per subset plus the finalize trigger.
 *
 * The finalize button is enabled exactly when every subset's kept count
 * has reached its target: n_positive for the positive subset, n_per_subset
 * for each negative subset, nothing for unclassified.
 */
export class ProgressPanel {
  readonly root: HTMLElement;

  private readonly client: ReviewClient;
  private progress: ProgressMap | null = null;

  private readonly tableBody: HTMLTableSectionElement;
  private readonly nPerSubsetInput: HTMLInputElement;
  private readonly nPositiveInput: HTMLInputElement;
  private readonly seedInput: HTMLInputElement;
  private readonly finalizeBtn: HTMLButtonElement;
  private readonly deficitsEl: HTMLDivElement;
  private readonly resultEl: HTMLDivElement;

  constructor(opts: ProgressPanelOptions) {
    this.client = opts.client;
    const nPerSubset = opts.defaults?.n_per_subset ?? 500;

    this.root = document.createElement("section");
    this.root.className = "progress-panel";

    const heading = document.createElement("h2");
    heading.textContent = "Review progress";

    const table = document.createElement("table");
    table.className = "progress";
    const head = document.createElement("thead");
    const headRow = document.createElement("tr");
    for (const label of ["subset", "kept", "pending", "rejected", "target", "deficit"]) {
      const th = document.createElement("th");
      th.textContent = label;
      headRow.append(th);
    }
    head.append(headRow);
    this.tableBody = document.createElement("tbody");
    table.append(head, this.tableBody);

    const controls = document.createElement("div");
    controls.className = "controls";
    this.nPerSubsetInput = this.numberInput(controls, "per negative subset", nPerSubset);
    this.nPositiveInput = this.numberInput(
      controls,
      "positive",
      opts.defaults?.n_positive ?? 3 * nPerSubset,
    );
    this.seedInput = this.numberInput(controls, "seed", opts.defaults?.seed ?? 0);

    const refreshBtn = document.createElement("button");
    refreshBtn.className = "refresh";
    refreshBtn.textContent = "Refresh";
    refreshBtn.addEventListener("click", () => void this.refresh());

    this.finalizeBtn = document.createElement("button");
    this.finalizeBtn.className = "finalize";
    this.finalizeBtn.textContent = "Finalize";
    this.finalizeBtn.disabled = true;
    this.finalizeBtn.addEventListener("click", () => void this.finalize());
    controls.append(refreshBtn, this.finalizeBtn);

    this.deficitsEl = document.createElement("div");
    this.deficitsEl.className = "deficits";
    this.deficitsEl.textContent = "no progress loaded yet";

    this.resultEl = document.createElement("div");
    this.resultEl.className = "finalize-result";

    this.root.append(heading, table, controls, this.deficitsEl, this.resultEl);
  }

  async refresh(): Promise<void> {
    try {
      this.progress = await this.client.progress();
    } catch (err) {
      this.progress = null;
      this.resultEl.textContent = `progress unavailable: ${describeError(err)}`;
      this.update();
      return;
    }
    this.update();
  }

  async finalize(): Promise<void> {
    const req = this.request();
    if (!req) return;
    this.finalizeBtn.disabled = true;
    try {
      const res = await this.client.finalize(req);
      this.resultEl.textContent = `wrote ${res.path} (${res.count} items)`;
    } catch (err) {
      if (err instanceof ApiError && err.status === 409 && isInsufficient(err.body)) {
        const body = err.body;
        this.resultEl.textContent = `insufficient ${body.subset}: have ${body.have}, need ${body.need}`;
      } else {
        this.resultEl.textContent = `finalize failed: ${describeError(err)}`;
      }
    } finally {
      this.update();
    }
  }

  /** Current finalize parameters, or null while any input is invalid. */
  request(): FinalizeRequest | null {
    const n_per_subset = this.intValue(this.nPerSubsetInput);
    const n_positive = this.intValue(this.nPositiveInput);
    const seed = this.intValue(this.seedInput);
    if (n_per_subset === null || n_per_subset < 1) return null;
    if (n_positive === null || n_positive < 1) return null;
    if (seed === null || seed < 0) return null;
    return { n_per_subset, n_positive, seed };
  }

  private intValue(input: HTMLInputElement): number | null {
    const value = Number(input.value);
    return Number.isInteger(value) && input.value.trim() !== "" ? value : null;
  }

  private numberInput(host: HTMLElement, label: string, value: number): HTMLInputElement {
    const wrap = document.createElement("label");
    wrap.textContent = `${label} `;
    const input = document.createElement("input");
    input.type = "number";
    input.min = "0";
    input.value = String(value);
    input.addEventListener("input", () => this.update());
    wrap.append(input);
    host.append(wrap);
    return input;
  }

  private deficits(req: FinalizeRequest): { subset: string; missing: number }[] {
    const out: { subset: string; missing: number }[] = [];
    for (const [subset, counts] of Object.entries(this.progress ?? {})) {
      const missing = subsetTarget(subset, req) - counts.kept;
      if (missing > 0) out.push({ subset, missing });
    }
    return out;
  }

  private update(): void {
    const req = this.request();
    this.renderTable(req);
    if (!this.progress) {
      this.finalizeBtn.disabled = true;
      this.deficitsEl.textContent = "no progress loaded yet";
      return;
    }
    if (!req) {
      this.finalizeBtn.disabled = true;
      this.deficitsEl.textContent = "finalize parameters must be positive integers";
      return;
    }
    const short = this.deficits(req);
    this.finalizeBtn.disabled = short.length > 0;
    this.deficitsEl.textContent =
      short.length === 0
        ? "all targets met"
        : short.map((d) => `${d.subset} needs ${d.missing} more`).join("; ");
  }

  private renderTable(req: FinalizeRequest | null): void {
    const rows: HTMLTableRowElement[] = [];
    for (const [subset, counts] of Object.entries(this.progress ?? {})) {
      const tr = document.createElement("tr");
      tr.dataset.subset = subset;
      const target = req ? subsetTarget(subset, req) : null;
      const deficit = target === null ? "" : String(Math.max(target - counts.kept, 0));
      const cells = [
        subset,
        String(counts.kept),
        String(counts.pending),
        String(counts.rejected),
        target === null ? "-" : String(target),
        deficit,
      ];
      for (const text of cells) {
        const td = document.createElement("td");
        td.textContent = text;
        tr.append(td);
      }
      rows.push(tr);
    }
    this.tableBody.replaceChildren(...rows);
  }
}
