import { ApiClient } from "./api.js";
import { QueueStore } from "./store.js";
import type { Stage, StatusPayload } from "./types.js";
import { isStage } from "./types.js";
import { renderBanner, renderDetail, renderQueue, renderStatus } from "./view.js";

const POLL_INTERVAL_MS = 2000;

const params = new URLSearchParams(window.location.search);
const api = new ApiClient("", params.get("token"));
const store = new QueueStore();
let status: StatusPayload | null = null;

const statusEl = document.getElementById("status")!;
const bannerEl = document.getElementById("banner")!;
const queueEl = document.getElementById("queue")!;
const detailEl = document.getElementById("detail")!;

function renderAll(): void {
  renderStatus(statusEl, status);
  renderQueue(queueEl, store, status, (id) => {
    store.select(id);
    renderAll();
  });
  renderDetail(detailEl, store, submit);
}

async function refresh(): Promise<void> {
  try {
    const [nextStatus, queries] = await Promise.all([api.getStatus(), api.getQueries()]);
    status = nextStatus;
    store.reconcile(queries);
    renderBanner(bannerEl, false);
    renderAll();
  } catch {
    // keep whatever we have; just surface the connectivity problem
    renderBanner(bannerEl, true);
  }
}

async function submit(queryId: string, stage: Stage): Promise<void> {
  if (!store.beginSubmit(queryId)) {
    return;
  }
  renderAll();
  try {
    await api.submitLabel(queryId, stage);
    store.acknowledge(queryId);
  } catch (error) {
    store.rollback(queryId, error instanceof Error ? error.message : "submission failed");
  }
  renderAll();
  void refresh();
}

document.addEventListener("keydown", (event) => {
  const stage = `F${event.key}`;
  if (isStage(stage) && store.selectedId !== null) {
    void submit(store.selectedId, stage);
  }
});

renderAll();
void refresh();
setInterval(() => void refresh(), POLL_INTERVAL_MS);
