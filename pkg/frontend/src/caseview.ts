/** Case state: the editable minutiae list, undo/redo, and the service
 * round trips.  Edits are purely local until save() PUTs them back. */

import { ServiceClient } from "./api.js";
import { CandidateEntry, CaseData, Minutia, wrapTheta } from "./types.js";

export type EditAction = "insert" | "delete" | "move" | "rotate";

export interface EditPayload {
  x?: number;
  y?: number;
  theta?: number;
  dx?: number;
  dy?: number;
  dtheta?: number;
}

interface HistoryEntry {
  label: string;
  // full before/after snapshots make undo a strict inverse even when the
  // edit itself is not numerically reversible (e.g. (x + dx) - dx !== x)
  before: Minutia[];
  after: Minutia[];
}

const UNDO_DEPTH = 50; // invariant requires >= 20

function clone(list: Minutia[]): Minutia[] {
  return list.map((m) => ({ x: m.x, y: m.y, theta: m.theta }));
}

export class CaseView {
  data: CaseData | null = null;
  minutiae: Minutia[] = [];
  version = 0;
  dirty = false;
  lastSearch: CandidateEntry[] | null = null;
  stale = false;
  warnings: string[] = [];
  private undoStack: HistoryEntry[] = [];
  private redoStack: HistoryEntry[] = [];

  constructor(private client: ServiceClient) {}

  get undoDepth(): number {
    return this.undoStack.length;
  }

  async load(caseId: string): Promise<void> {
    this.data = await this.client.getCase(caseId);
    this.minutiae = clone(this.data.minutiae);
    this.version = this.data.version;
    this.dirty = false;
    this.undoStack = [];
    this.redoStack = [];
    this.warnings = [];
  }

  editMinutia(action: EditAction, target?: number, payload: EditPayload = {}): this {
    if (this.data === null) throw new Error("no case loaded");
    const before = clone(this.minutiae);
    const next = clone(this.minutiae);

    if (action === "insert") {
      const m = {
        x: payload.x ?? 0,
        y: payload.y ?? 0,
        theta: wrapTheta(payload.theta ?? 0),
      };
      if (target === undefined || target >= next.length) next.push(m);
      else next.splice(Math.max(0, target), 0, m);
    } else {
      if (target === undefined || target < 0 || target >= next.length) {
        this.warnings.push(`${action}: no minutia at index ${target}`);
        return this; // no-op with visible warning
      }
      if (action === "delete") {
        next.splice(target, 1);
      } else if (action === "move") {
        const dx = payload.dx ?? 0;
        const dy = payload.dy ?? 0;
        if (dx === 0 && dy === 0) return this; // unchanged, not dirty
        next[target] = { ...next[target], x: next[target].x + dx, y: next[target].y + dy };
      } else {
        const dtheta = payload.dtheta ?? 0;
        if (dtheta === 0) return this;
        next[target] = { ...next[target], theta: wrapTheta(next[target].theta + dtheta) };
      }
    }

    this.minutiae = next;
    this.dirty = true;
    this.undoStack.push({ label: action, before, after: clone(next) });
    if (this.undoStack.length > UNDO_DEPTH) this.undoStack.shift();
    this.redoStack = [];
    return this;
  }

  undo(): boolean {
    const entry = this.undoStack.pop();
    if (!entry) return false;
    this.minutiae = clone(entry.before);
    this.redoStack.push(entry);
    this.dirty = true;
    return true;
  }

  redo(): boolean {
    const entry = this.redoStack.pop();
    if (!entry) return false;
    this.minutiae = clone(entry.after);
    this.undoStack.push(entry);
    this.dirty = true;
    return true;
  }

  async save(): Promise<void> {
    if (this.data === null) throw new Error("no case loaded");
    const res = await this.client.putMinutiae(this.data.id, this.version, this.minutiae);
    this.version = res.version;
    this.dirty = false;
  }

  async rerunSearch(topk?: number): Promise<CandidateEntry[] | null> {
    if (this.data === null) throw new Error("no case loaded");
    if (this.dirty) throw new Error("save edits before searching");
    try {
      this.lastSearch = await this.client.search(this.data.id, topk);
      this.stale = false;
    } catch {
      // service unreachable: keep the previous list, flag it stale
      this.stale = true;
    }
    return this.lastSearch;
  }
}
