import type { QueueStore } from "./store.js";
import type { Stage, StatusPayload } from "./types.js";
import { STAGES } from "./types.js";

function percent(value: number): string {
  return `${(100 * value).toFixed(1)}%`;
}

export function renderStatus(el: HTMLElement, status: StatusPayload | null): void {
  if (status === null) {
    el.textContent = "waiting for the service...";
    return;
  }
  const metrics = status.last_metrics;
  const metricsText = metrics
    ? `acc ${percent(metrics.accuracy)} / AUC ${percent(metrics.macro_auc)} (${metrics.n_labeled} labeled)`
    : "no evaluation yet";
  el.textContent =
    `iteration ${status.iteration} | labeled d = ${percent(status.d)} | ` +
    `${status.pending_count} pending | ${metricsText}` +
    (status.finished ? " | labeling complete" : "");
}

export function renderBanner(el: HTMLElement, visible: boolean): void {
  el.hidden = !visible;
}

export function renderQueue(
  el: HTMLElement,
  store: QueueStore,
  status: StatusPayload | null,
  onSelect: (id: string) => void,
): void {
  el.replaceChildren();
  const queue = store.queue();
  if (queue.length === 0) {
    const empty = document.createElement("p");
    empty.className = "empty-state";
    const iteration = status ? status.iteration : 0;
    empty.textContent = status?.finished
      ? `All queries labeled. Final iteration ${iteration}.`
      : `No pending queries at iteration ${iteration}. Waiting for the loop...`;
    el.appendChild(empty);
    return;
  }
  const list = document.createElement("ul");
  list.className = "query-list";
  for (const view of queue) {
    const item = document.createElement("li");
    const button = document.createElement("button");
    button.type = "button";
    button.dataset.queryId = view.queryId;
    button.textContent = `${view.queryId} (t=${view.iteration})`;
    if (view.state === "submitted") {
      button.textContent += " [submitting...]";
      button.disabled = true;
    }
    if (view.queryId === store.selectedId) {
      button.classList.add("selected");
    }
    button.addEventListener("click", () => onSelect(view.queryId));
    item.appendChild(button);
    list.appendChild(item);
  }
  el.appendChild(list);
}

export function renderDetail(
  el: HTMLElement,
  store: QueueStore,
  onSubmit: (id: string, stage: Stage) => void,
): void {
  el.replaceChildren();
  const view = store.selected();
  if (view === null) {
    const hint = document.createElement("p");
    hint.className = "detail-hint";
    hint.textContent = "Select a query to label it. Keys 0-4 submit F0-F4.";
    el.appendChild(hint);
    return;
  }

  const panes = document.createElement("div");
  panes.className = "image-panes";
  for (const image of view.images) {
    const figure = document.createElement("figure");
    const img = document.createElement("img");
    img.src = image.url;
    img.alt = `${image.modality} image ${image.sample_id}`;
    const caption = document.createElement("figcaption");
    caption.textContent = image.modality;
    figure.append(img, caption);
    panes.appendChild(figure);
  }
  el.appendChild(panes);

  const controls = document.createElement("div");
  controls.className = "stage-buttons";
  for (const stage of STAGES) {
    const button = document.createElement("button");
    button.type = "button";
    button.dataset.stage = stage;
    button.textContent = stage;
    button.disabled = view.state !== "pending";
    button.addEventListener("click", () => onSubmit(view.queryId, stage));
    controls.appendChild(button);
  }
  el.appendChild(controls);

  if (view.error) {
    const error = document.createElement("p");
    error.className = "submit-error";
    error.textContent = view.error;
    el.appendChild(error);
  }
}
