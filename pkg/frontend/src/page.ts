import { describeError, ReviewClient } from "./api.js";
import { KeyedQueue } from "./queue.js";
import type { CandidateStatus, CandidateView, DecisionAction } from "./types.js";

export interface SubsetPageOptions {
  client: ReviewClient;
  subset: string;
  pageSize?: number;
  reviewer?: string;
  /** Fired after the service acknowledges a decision. */
  onDecision?: () => void;
}

const STATUS_OF: Record<DecisionAction, CandidateStatus> = {
  keep: "kept",
  reject: "rejected",
};

/**
 * Paginated candidate list for one subset.
 *
 * Each row shows the image thumbnail, question, answer and a checkbox.
 * Unchecking posts a reject, rechecking posts a keep. Status changes are
 * applied optimistically and rolled back if the POST fails; posts for the
 * same candidate are queued so they reach the service in click order.
 */
export class SubsetPage {
  readonly root: HTMLElement;
  readonly subset: string;

  private readonly client: ReviewClient;
  private readonly pageSize: number;
  private readonly reviewer: string;
  private readonly onDecision?: () => void;
  private readonly queue = new KeyedQueue();
  private readonly inflight = new Set<Promise<void>>();

  private rows: CandidateView[] = [];
  private rowEls: HTMLLIElement[] = [];
  private offset = 0;
  private total = 0;
  private current = 0;

  private readonly banner: HTMLDivElement;
  private readonly bannerText: HTMLSpanElement;
  private readonly pageLabel: HTMLSpanElement;
  private readonly prevBtn: HTMLButtonElement;
  private readonly nextBtn: HTMLButtonElement;
  private readonly list: HTMLUListElement;

  constructor(opts: SubsetPageOptions) {
    this.client = opts.client;
    this.subset = opts.subset;
    this.pageSize = opts.pageSize ?? 50;
    this.reviewer = opts.reviewer ?? "";
    this.onDecision = opts.onDecision;

    this.root = document.createElement("section");
    this.root.className = "subset-page";

    this.banner = document.createElement("div");
    this.banner.className = "banner";
    this.banner.hidden = true;
    this.bannerText = document.createElement("span");
    const retry = document.createElement("button");
    retry.className = "retry";
    retry.textContent = "Retry";
    retry.addEventListener("click", () => void this.load(this.offset));
    this.banner.append(this.bannerText, " ", retry);

    const pager = document.createElement("div");
    pager.className = "pager";
    this.prevBtn = document.createElement("button");
    this.prevBtn.className = "prev";
    this.prevBtn.textContent = "Prev";
    this.prevBtn.addEventListener("click", () =>
      void this.load(Math.max(this.offset - this.pageSize, 0)),
    );
    this.nextBtn = document.createElement("button");
    this.nextBtn.className = "next";
    this.nextBtn.textContent = "Next";
    this.nextBtn.addEventListener("click", () => void this.load(this.offset + this.pageSize));
    this.pageLabel = document.createElement("span");
    this.pageLabel.className = "page-label";
    pager.append(this.prevBtn, this.pageLabel, this.nextBtn);

    this.list = document.createElement("ul");
    this.list.className = "candidates";

    this.root.append(this.banner, pager, this.list);
  }

  async load(offset = 0): Promise<void> {
    let page;
    try {
      page = await this.client.candidates(this.subset, offset, this.pageSize);
    } catch (err) {
      this.showBanner(`service unreachable: ${describeError(err)}`);
      return;
    }
    this.banner.hidden = true;
    this.offset = page.offset;
    this.total = page.total;
    this.rows = page.candidates;
    this.current = 0;
    this.render();
  }

  /** Resolves once every issued decision POST has settled. */
  async idle(): Promise<void> {
    while (this.inflight.size > 0) {
      await Promise.all([...this.inflight]);
    }
  }

  handleKey(ev: KeyboardEvent): void {
    const target = ev.target;
    if (target instanceof HTMLInputElement && target.type !== "checkbox") return;
    switch (ev.key) {
      case "ArrowDown":
      case "j":
        this.setCurrent(this.current + 1);
        break;
      case "ArrowUp":
        this.setCurrent(this.current - 1);
        break;
      case "x":
        this.decide(this.current, "reject");
        this.setCurrent(this.current + 1);
        break;
      case "v":
        this.decide(this.current, "keep");
        this.setCurrent(this.current + 1);
        break;
      default:
        return;
    }
    ev.preventDefault();
  }

  decide(index: number, action: DecisionAction): void {
    const view = this.rows[index];
    if (!view) return;
    const desired = STATUS_OF[action];
    if (view.status === desired) {
      this.syncRow(index);
      return;
    }
    const prev = view.status;
    view.status = desired;
    this.syncRow(index);

    const id = view.candidate_id;
    const chain: Promise<void> = this.queue
      .enqueue(id, () => this.client.decide(id, action, this.reviewer))
      .then((ack) => {
        view.status = ack.status;
        if (this.rows[index] === view) this.syncRow(index);
        this.onDecision?.();
      })
      .catch((err) => {
        // roll back unless a newer toggle already moved the row on
        if (view.status === desired) {
          view.status = prev;
          if (this.rows[index] === view) this.syncRow(index);
        }
        this.showBanner(`decision failed: ${describeError(err)}`);
      });
    this.inflight.add(chain);
    void chain.finally(() => this.inflight.delete(chain));
  }

  private render(): void {
    this.rowEls = this.rows.map((view, index) => this.buildRow(view, index));
    this.list.replaceChildren(...this.rowEls);
    const last = this.total === 0 ? 0 : this.offset + this.rows.length;
    this.pageLabel.textContent =
      this.total === 0 ? "0 of 0" : `${this.offset + 1}-${last} of ${this.total}`;
    this.prevBtn.disabled = this.offset === 0;
    this.nextBtn.disabled = this.offset + this.pageSize >= this.total;
    this.setCurrent(this.current);
  }

  private buildRow(view: CandidateView, index: number): HTMLLIElement {
    const li = document.createElement("li");
    li.className = "row";
    li.dataset.id = view.candidate_id;

    const img = document.createElement("img");
    img.className = "thumb";
    img.loading = "lazy";
    img.src = this.client.imageUrl(view);
    img.alt = view.image_id;

    const meta = document.createElement("div");
    meta.className = "meta";
    const question = document.createElement("div");
    question.className = "question";
    question.textContent = view.question;
    const answer = document.createElement("div");
    answer.className = "answer";
    answer.textContent = `answer: ${view.answer}`;
    meta.append(question, answer);

    const badge = document.createElement("span");
    badge.className = "status";

    const box = document.createElement("input");
    box.type = "checkbox";
    box.className = "keep-box";
    box.addEventListener("change", () =>
      this.decide(index, box.checked ? "keep" : "reject"),
    );

    li.append(img, meta, badge, box);
    li.addEventListener("click", (ev) => {
      if (ev.target !== box) this.setCurrent(index);
    });
    this.paintRow(li, view);
    return li;
  }

  private syncRow(index: number): void {
    const li = this.rowEls[index];
    const view = this.rows[index];
    if (li && view) this.paintRow(li, view);
  }

  private paintRow(li: HTMLLIElement, view: CandidateView): void {
    const badge = li.querySelector<HTMLSpanElement>("span.status");
    const box = li.querySelector<HTMLInputElement>("input.keep-box");
    if (badge) {
      badge.textContent = view.status;
      badge.dataset.status = view.status;
    }
    if (box) box.checked = view.status !== "rejected";
    li.classList.toggle("rejected", view.status === "rejected");
  }

  private setCurrent(index: number): void {
    if (this.rowEls.length === 0) {
      this.current = 0;
      return;
    }
    this.current = Math.min(Math.max(index, 0), this.rowEls.length - 1);
    this.rowEls.forEach((li, i) => {
      li.classList.toggle("current", i === this.current);
    });
    const el = this.rowEls[this.current];
    if (el && typeof el.scrollIntoView === "function") {
      try {
        el.scrollIntoView({ block: "nearest" });
      } catch {
        // headless DOM without layout
      }
    }
  }

  private showBanner(message: string): void {
    this.bannerText.textContent = message;
    this.banner.hidden = false;
  }
}
