import type { QueryView, ServerQuery } from "./types.js";

/**
 * Client-side queue state. The server is the source of truth: reconcile()
 * rebuilds the pending list from GET /queries on every poll, so a page
 * reload reconstructs identical state. Submission goes pending ->
 * submitted (optimistic, at most one in flight per query) and leaves the
 * queue only on a server acknowledgment; errors roll it back to pending.
 */
export class QueueStore {
  private items = new Map<string, QueryView>();
  selectedId: string | null = null;

  reconcile(server: ServerQuery[]): void {
    const listed = new Set(server.map((q) => q.query_id));
    for (const query of server) {
      if (!this.items.has(query.query_id)) {
        this.items.set(query.query_id, {
          queryId: query.query_id,
          iteration: query.iteration,
          images: query.images,
          state: "pending",
        });
      }
    }
    for (const [id, view] of this.items) {
      // an in-flight submission must survive a poll that races the POST
      if (!listed.has(id) && view.state !== "submitted") {
        this.items.delete(id);
      }
    }
    if (this.selectedId !== null && !this.items.has(this.selectedId)) {
      this.selectedId = null;
    }
  }

  queue(): QueryView[] {
    return [...this.items.values()];
  }

  get(id: string): QueryView | undefined {
    return this.items.get(id);
  }

  selected(): QueryView | null {
    return this.selectedId !== null ? (this.items.get(this.selectedId) ?? null) : null;
  }

  select(id: string): void {
    if (this.items.has(id)) {
      this.selectedId = id;
    }
  }

  /** Returns false when the query is unknown or already has a submission in flight. */
  beginSubmit(id: string): boolean {
    const view = this.items.get(id);
    if (!view || view.state !== "pending") {
      return false;
    }
    view.state = "submitted";
    view.error = undefined;
    return true;
  }

  acknowledge(id: string): void {
    const view = this.items.get(id);
    if (!view || view.state !== "submitted") {
      return;
    }
    view.state = "acknowledged";
    this.items.delete(id);
    if (this.selectedId === id) {
      this.selectedId = null;
    }
  }

  rollback(id: string, error: string): void {
    const view = this.items.get(id);
    if (!view || view.state !== "submitted") {
      return;
    }
    view.state = "pending";
    view.error = error;
  }
}
