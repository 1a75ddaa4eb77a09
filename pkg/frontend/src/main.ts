import { ReviewClient, resolveBaseUrl } from "./api.js";
import { SubsetPage } from "./page.js";
import { ProgressPanel } from "./progress.js";

const FALLBACK_SUBSETS = ["positive", "category", "attribute", "relation", "unclassified"];

function intParam(params: URLSearchParams, key: string): number | undefined {
  const raw = params.get(key);
  if (raw === null) return undefined;
  const value = Number(raw);
  return Number.isInteger(value) ? value : undefined;
}

async function boot(host: HTMLElement): Promise<void> {
  const params = new URLSearchParams(location.search);
  const client = new ReviewClient(resolveBaseUrl());
  const panel = new ProgressPanel({
    client,
    defaults: {
      n_per_subset: intParam(params, "n_per_subset"),
      n_positive: intParam(params, "n_positive"),
      seed: intParam(params, "seed"),
    },
  });

  const nav = document.createElement("nav");
  const pageHost = document.createElement("div");
  pageHost.className = "page-host";
  host.replaceChildren(nav, panel.root, pageHost);

  const subsets = await client.subsets().catch(() => FALLBACK_SUBSETS);
  let page: SubsetPage | null = null;

  const show = (subset: string): void => {
    page = new SubsetPage({
      client,
      subset,
      onDecision: () => void panel.refresh(),
    });
    pageHost.replaceChildren(page.root);
    void page.load(0);
    for (const link of nav.querySelectorAll<HTMLButtonElement>("button")) {
      link.classList.toggle("active", link.dataset.subset === subset);
    }
  };

  for (const subset of subsets) {
    const link = document.createElement("button");
    link.textContent = subset;
    link.dataset.subset = subset;
    link.addEventListener("click", () => {
      location.hash = subset;
      show(subset);
    });
    nav.append(link);
  }

  window.addEventListener("hashchange", () => {
    const subset = location.hash.slice(1);
    if (subsets.includes(subset) && subset !== page?.subset) show(subset);
  });
  document.addEventListener("keydown", (ev) => page?.handleKey(ev));

  const initial = location.hash.slice(1);
  show(subsets.includes(initial) ? initial : (subsets[0] ?? FALLBACK_SUBSETS[0]!));
  void panel.refresh();
}

const app = document.getElementById("app");
if (app) void boot(app);
