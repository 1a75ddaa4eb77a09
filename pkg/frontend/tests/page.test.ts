import { beforeEach, describe, expect, it } from "vitest";

import { ReviewClient } from "../src/api.js";
import { SubsetPage, type SubsetPageOptions } from "../src/page.js";
import { deferred, FakeReviewService, flush, makePool } from "./fake_service.js";

function mountPage(
  svc: FakeReviewService,
  subset: string,
  opts: Partial<SubsetPageOptions> = {},
): SubsetPage {
  const client = new ReviewClient("http://fake.test", svc.fetch);
  const page = new SubsetPage({ client, subset, ...opts });
  document.body.replaceChildren(page.root);
  return page;
}

function rowEls(page: SubsetPage): HTMLLIElement[] {
  return [...page.root.querySelectorAll<HTMLLIElement>("li.row")];
}

function checkboxOf(row: HTMLLIElement): HTMLInputElement {
  return row.querySelector<HTMLInputElement>("input.keep-box")!;
}

beforeEach(() => {
  document.body.replaceChildren();
});

describe("subset page rendering", () => {
  it("renders every candidate of a 12-item subset with an image", async () => {
    const svc = new FakeReviewService(makePool({ category: 12 }));
    const page = mountPage(svc, "category");
    await page.load(0);

    const rows = rowEls(page);
    expect(rows).toHaveLength(12);
    for (const row of rows) {
      const img = row.querySelector<HTMLImageElement>("img.thumb")!;
      expect(img.src).toContain("/images/img-category-");
      expect(img.loading).toBe("lazy");
      expect(row.querySelector(".question")!.textContent).toContain("category thing");
      expect(checkboxOf(row).checked).toBe(true);
      expect(row.querySelector(".status")!.textContent).toBe("pending");
    }
  });

  it("shows an empty page as zero of zero", async () => {
    const svc = new FakeReviewService(makePool({ category: 3 }));
    const page = mountPage(svc, "positive");
    await page.load(0);
    expect(rowEls(page)).toHaveLength(0);
    expect(page.root.querySelector(".page-label")!.textContent).toBe("0 of 0");
  });

  it("paginates at fifty rows with working prev and next", async () => {
    const svc = new FakeReviewService(makePool({ category: 120 }));
    const page = mountPage(svc, "category");
    await page.load(0);

    const label = () => page.root.querySelector(".page-label")!.textContent;
    const prev = page.root.querySelector<HTMLButtonElement>("button.prev")!;
    const next = page.root.querySelector<HTMLButtonElement>("button.next")!;

    expect(rowEls(page)).toHaveLength(50);
    expect(label()).toBe("1-50 of 120");
    expect(prev.disabled).toBe(true);
    expect(next.disabled).toBe(false);

    next.click();
    await flush();
    expect(label()).toBe("51-100 of 120");
    expect(rowEls(page)[0]!.dataset.id).toBe("category-050");

    next.click();
    await flush();
    expect(rowEls(page)).toHaveLength(20);
    expect(label()).toBe("101-120 of 120");
    expect(next.disabled).toBe(true);

    prev.click();
    await flush();
    expect(label()).toBe("51-100 of 120");
    expect(prev.disabled).toBe(false);
  });
});

describe("decision posting", () => {
  it("a single uncheck posts exactly one reject", async () => {
    const svc = new FakeReviewService(makePool({ category: 12 }));
    const page = mountPage(svc, "category");
    await page.load(0);

    checkboxOf(rowEls(page)[2]!).click();
    await page.idle();

    const posts = svc.decisionPosts();
    expect(posts).toHaveLength(1);
    expect(posts[0]!.body).toMatchObject({
      candidate_id: "category-002",
      action: "reject",
    });
    expect(svc.statuses.get("category-002")).toBe("rejected");
    const row = rowEls(page)[2]!;
    expect(row.classList.contains("rejected")).toBe(true);
    expect(row.querySelector(".status")!.textContent).toBe("rejected");
  });

  it("rechecking posts a keep after the reject, in order", async () => {
    const svc = new FakeReviewService(makePool({ category: 4 }));
    const page = mountPage(svc, "category");
    await page.load(0);

    const box = checkboxOf(rowEls(page)[1]!);
    box.click();
    box.click();
    await page.idle();

    expect(svc.log).toEqual([
      { candidate_id: "category-001", action: "reject" },
      { candidate_id: "category-001", action: "keep" },
    ]);
    expect(svc.statuses.get("category-001")).toBe("kept");
    expect(rowEls(page)[1]!.querySelector(".status")!.textContent).toBe("kept");
  });

  it("a reload reflects the persisted decisions", async () => {
    const svc = new FakeReviewService(makePool({ category: 12 }));
    const first = mountPage(svc, "category");
    await first.load(0);
    checkboxOf(rowEls(first)[2]!).click();
    const keepBox = checkboxOf(rowEls(first)[5]!);
    keepBox.click();
    keepBox.click();
    await first.idle();

    const reloaded = mountPage(svc, "category");
    await reloaded.load(0);

    const ids = rowEls(reloaded).map((row) => row.dataset.id);
    expect(ids).toHaveLength(11);
    expect(ids).not.toContain("category-002");
    const keptRow = rowEls(reloaded).find((row) => row.dataset.id === "category-005")!;
    expect(keptRow.querySelector(".status")!.textContent).toBe("kept");
    expect(checkboxOf(keptRow).checked).toBe(true);
  });

  it("notifies the decision callback only on acknowledgement", async () => {
    const svc = new FakeReviewService(makePool({ category: 3 }));
    let acked = 0;
    const page = mountPage(svc, "category", { onDecision: () => acked++ });
    await page.load(0);

    checkboxOf(rowEls(page)[0]!).click();
    await page.idle();
    expect(acked).toBe(1);

    svc.failNextRequests = 1;
    checkboxOf(rowEls(page)[1]!).click();
    await page.idle();
    expect(acked).toBe(1);
  });
});

describe("optimistic updates", () => {
  it("applies the change before the ack and keeps it after", async () => {
    const svc = new FakeReviewService(makePool({ category: 3 }));
    const page = mountPage(svc, "category");
    await page.load(0);
    const gate = deferred();
    svc.delay = () => gate.promise;

    const row = rowEls(page)[0]!;
    checkboxOf(row).click();
    expect(row.querySelector(".status")!.textContent).toBe("rejected");
    expect(checkboxOf(row).checked).toBe(false);

    gate.resolve();
    await page.idle();
    expect(row.querySelector(".status")!.textContent).toBe("rejected");
    expect(svc.statuses.get("category-000")).toBe("rejected");
  });

  it("rolls back and shows the banner when the post fails", async () => {
    const svc = new FakeReviewService(makePool({ category: 3 }));
    const page = mountPage(svc, "category");
    await page.load(0);
    svc.failNextRequests = 1;

    const row = rowEls(page)[0]!;
    checkboxOf(row).click();
    expect(row.querySelector(".status")!.textContent).toBe("rejected");
    await page.idle();

    expect(row.querySelector(".status")!.textContent).toBe("pending");
    expect(checkboxOf(row).checked).toBe(true);
    expect(svc.log).toHaveLength(0);

    const banner = page.root.querySelector<HTMLDivElement>(".banner")!;
    expect(banner.hidden).toBe(false);
    expect(banner.textContent).toContain("decision failed");

    banner.querySelector<HTMLButtonElement>("button.retry")!.click();
    await flush();
    expect(banner.hidden).toBe(true);
  });

  it("shows the unreachable banner when the listing itself fails", async () => {
    const svc = new FakeReviewService(makePool({ category: 3 }));
    svc.unreachable = true;
    const page = mountPage(svc, "category");
    await page.load(0);

    const banner = page.root.querySelector<HTMLDivElement>(".banner")!;
    expect(banner.hidden).toBe(false);
    expect(banner.textContent).toContain("service unreachable");

    svc.unreachable = false;
    banner.querySelector<HTMLButtonElement>("button.retry")!.click();
    await flush();
    expect(banner.hidden).toBe(true);
    expect(rowEls(page)).toHaveLength(3);
  });

  it("queues rapid toggles of one candidate so posts stay ordered", async () => {
    const svc = new FakeReviewService(makePool({ category: 2 }));
    const page = mountPage(svc, "category");
    await page.load(0);

    const gate = deferred();
    svc.delay = () => gate.promise;
    const box = checkboxOf(rowEls(page)[0]!);
    box.click();
    await flush(1);
    box.click();
    await flush(1);

    // the keep must wait in the queue until the reject settles
    expect(svc.decisionPosts()).toHaveLength(1);

    gate.resolve();
    svc.delay = undefined;
    await page.idle();
    expect(svc.decisionPosts().map((r) => r.body?.action)).toEqual(["reject", "keep"]);
    expect(svc.statuses.get("category-000")).toBe("kept");
  });
});

describe("keyboard triage", () => {
  it("x rejects the current row and advances", async () => {
    const svc = new FakeReviewService(makePool({ category: 4 }));
    const page = mountPage(svc, "category");
    await page.load(0);

    expect(rowEls(page)[0]!.classList.contains("current")).toBe(true);
    page.handleKey(new KeyboardEvent("keydown", { key: "x" }));
    await page.idle();

    expect(svc.statuses.get("category-000")).toBe("rejected");
    expect(rowEls(page)[1]!.classList.contains("current")).toBe(true);
  });

  it("v keeps the current row and advances", async () => {
    const svc = new FakeReviewService(makePool({ category: 4 }));
    const page = mountPage(svc, "category");
    await page.load(0);

    page.handleKey(new KeyboardEvent("keydown", { key: "v" }));
    page.handleKey(new KeyboardEvent("keydown", { key: "v" }));
    await page.idle();

    expect(svc.statuses.get("category-000")).toBe("kept");
    expect(svc.statuses.get("category-001")).toBe("kept");
    expect(svc.log.map((entry) => entry.candidate_id)).toEqual([
      "category-000",
      "category-001",
    ]);
    expect(rowEls(page)[2]!.classList.contains("current")).toBe(true);
  });

  it("arrows move the selection without posting", async () => {
    const svc = new FakeReviewService(makePool({ category: 3 }));
    const page = mountPage(svc, "category");
    await page.load(0);

    page.handleKey(new KeyboardEvent("keydown", { key: "ArrowDown" }));
    page.handleKey(new KeyboardEvent("keydown", { key: "ArrowDown" }));
    page.handleKey(new KeyboardEvent("keydown", { key: "ArrowDown" }));
    expect(rowEls(page)[2]!.classList.contains("current")).toBe(true);

    page.handleKey(new KeyboardEvent("keydown", { key: "ArrowUp" }));
    expect(rowEls(page)[1]!.classList.contains("current")).toBe(true);
    expect(svc.decisionPosts()).toHaveLength(0);
  });

  it("ignores keys typed into text inputs", async () => {
    const svc = new FakeReviewService(makePool({ category: 2 }));
    const page = mountPage(svc, "category");
    await page.load(0);

    const field = document.createElement("input");
    field.type = "number";
    document.body.append(field);
    const ev = new KeyboardEvent("keydown", { key: "x" });
    Object.defineProperty(ev, "target", { value: field });
    page.handleKey(ev);
    await page.idle();
    expect(svc.decisionPosts()).toHaveLength(0);
  });
});
