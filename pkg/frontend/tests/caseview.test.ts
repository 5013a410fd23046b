import { beforeEach, describe, expect, it } from "vitest";

import { ServiceClient } from "../src/api.js";
import { CaseView } from "../src/caseview.js";
import { CaseData, Minutia, TWO_PI, wrapTheta } from "../src/types.js";

const BASE_CASE: CaseData = {
  id: "case1",
  version: 3,
  height: 64,
  width: 64,
  imagePgmB64: "",
  minutiae: [
    { x: 10, y: 20, theta: 1.0 },
    { x: 30, y: 40, theta: 2.5 },
  ],
  fields: { blockSize: 16, orientation: [[0]], roi: [[1]] },
};

/** Client stub backed by an in-memory case record. */
function fakeClient(record: { data: CaseData; puts: Minutia[][] }): ServiceClient {
  const stub = {
    getCase: async () => JSON.parse(JSON.stringify(record.data)),
    putMinutiae: async (_id: string, version: number, minutiae: Minutia[]) => {
      if (version !== record.data.version) {
        throw Object.assign(new Error("stale"), { status: 409 });
      }
      record.data.version += 1;
      record.data.minutiae = JSON.parse(JSON.stringify(minutiae));
      record.puts.push(minutiae);
      return { version: record.data.version, count: minutiae.length };
    },
    search: async () => [],
    referenceImage: async () => "",
  };
  return stub as unknown as ServiceClient;
}

describe("wrapTheta", () => {
  it("maps drag angles into [0, 2*pi)", () => {
    expect(wrapTheta(0)).toBe(0);
    expect(wrapTheta(-1)).toBeCloseTo(TWO_PI - 1, 12);
    expect(wrapTheta(TWO_PI)).toBe(0);
    expect(wrapTheta(7 * Math.PI)).toBeCloseTo(Math.PI, 12);
    for (const t of [-100.5, -1e-18, 0.1, 6.283, 55]) {
      const w = wrapTheta(t);
      expect(w).toBeGreaterThanOrEqual(0);
      expect(w).toBeLessThan(TWO_PI);
    }
  });
});

describe("CaseView edits", () => {
  let view: CaseView;
  let record: { data: CaseData; puts: Minutia[][] };

  beforeEach(async () => {
    record = { data: JSON.parse(JSON.stringify(BASE_CASE)), puts: [] };
    view = new CaseView(fakeClient(record));
    await view.load("case1");
  });

  it("loads server truth", () => {
    expect(view.minutiae).toEqual(BASE_CASE.minutiae);
    expect(view.version).toBe(3);
    expect(view.dirty).toBe(false);
  });

  it("insert appends and wraps theta", () => {
    view.editMinutia("insert", undefined, { x: 5, y: 6, theta: -1 });
    expect(view.minutiae).toHaveLength(3);
    expect(view.minutiae[2].theta).toBeCloseTo(TWO_PI - 1, 12);
    expect(view.dirty).toBe(true);
  });

  it("delete removes by index", () => {
    view.editMinutia("delete", 0);
    expect(view.minutiae).toEqual([{ x: 30, y: 40, theta: 2.5 }]);
  });

  it("move by (0,0) is a no-op and not dirty", () => {
    const before = JSON.parse(JSON.stringify(view.minutiae));
    view.editMinutia("move", 1, { dx: 0, dy: 0 });
    expect(view.minutiae).toEqual(before);
    expect(view.dirty).toBe(false);
    expect(view.undoDepth).toBe(0);
  });

  it("rotate keeps theta in range for any drag input", () => {
    view.editMinutia("rotate", 0, { dtheta: 100.7 });
    expect(view.minutiae[0].theta).toBeGreaterThanOrEqual(0);
    expect(view.minutiae[0].theta).toBeLessThan(TWO_PI);
  });

  it("edit on a nonexistent index is a no-op with a warning", () => {
    const before = JSON.parse(JSON.stringify(view.minutiae));
    view.editMinutia("delete", 99);
    view.editMinutia("move", -1, { dx: 1, dy: 1 });
    expect(view.minutiae).toEqual(before);
    expect(view.warnings).toHaveLength(2);
    expect(view.dirty).toBe(false);
  });

  it("insert then undo restores the exact list", () => {
    const before = JSON.parse(JSON.stringify(view.minutiae));
    view.editMinutia("insert", undefined, { x: 1, y: 2, theta: 3 });
    expect(view.undo()).toBe(true);
    expect(view.minutiae).toEqual(before);
  });

  it("undo is a strict inverse for every action", () => {
    for (const [action, target, payload] of [
      ["insert", 0, { x: 7.3, y: 8.1, theta: 0.2 }],
      ["delete", 1, {}],
      ["move", 0, { dx: 0.3, dy: -0.7 }], // (x + dx) - dx would not round-trip
      ["rotate", 1, { dtheta: 5.5 }],
    ] as const) {
      const before = JSON.parse(JSON.stringify(view.minutiae));
      view.editMinutia(action, target, payload);
      expect(view.undo()).toBe(true);
      expect(view.minutiae).toEqual(before);
    }
  });

  it("redo replays an undone edit exactly", () => {
    view.editMinutia("move", 0, { dx: 1.5, dy: 2.5 });
    const after = JSON.parse(JSON.stringify(view.minutiae));
    view.undo();
    expect(view.redo()).toBe(true);
    expect(view.minutiae).toEqual(after);
    expect(view.redo()).toBe(false);
  });

  it("keeps an undo depth of at least 20", () => {
    const before = JSON.parse(JSON.stringify(view.minutiae));
    for (let i = 0; i < 20; i++) {
      view.editMinutia("insert", undefined, { x: i, y: i, theta: 0.1 * i });
    }
    for (let i = 0; i < 20; i++) expect(view.undo()).toBe(true);
    expect(view.minutiae).toEqual(before);
  });

  it("save PUTs the edited list and clears dirty", async () => {
    view.editMinutia("insert", undefined, { x: 1, y: 1, theta: 1 });
    await view.save();
    expect(view.dirty).toBe(false);
    expect(view.version).toBe(4);
    expect(record.puts[0]).toHaveLength(3);
  });

  it("rerunSearch refuses unsaved edits", async () => {
    view.editMinutia("delete", 0);
    await expect(view.rerunSearch()).rejects.toThrow(/save/);
  });

  it("rerunSearch keeps the previous list with a stale flag when the service dies", async () => {
    await view.rerunSearch();
    expect(view.stale).toBe(false);
    const dead = new CaseView(
      fakeClient(record) as unknown as ServiceClient,
    );
    await dead.load("case1");
    (dead as any).client = {
      ...((dead as any).client ?? {}),
      search: async () => {
        throw new Error("ECONNREFUSED");
      },
    };
    const previous = dead.lastSearch;
    const out = await dead.rerunSearch();
    expect(dead.stale).toBe(true);
    expect(out).toBe(previous);
  });
});

describe("undo/redo property", () => {
  // small deterministic PRNG so failures reproduce
  function mulberry32(seed: number) {
    let a = seed >>> 0;
    return () => {
      a = (a + 0x6d2b79f5) >>> 0;
      let t = Math.imul(a ^ (a >>> 15), 1 | a);
      t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
      return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
    };
  }

  it("any random edit sequence fully unwinds and replays", async () => {
    for (let trial = 0; trial < 30; trial++) {
      const rnd = mulberry32(1000 + trial);
      const record = { data: JSON.parse(JSON.stringify(BASE_CASE)), puts: [] as Minutia[][] };
      const view = new CaseView(fakeClient(record));
      await view.load("case1");
      const initial = JSON.parse(JSON.stringify(view.minutiae));

      const actions = ["insert", "delete", "move", "rotate"] as const;
      let applied = 0;
      const steps = 1 + Math.floor(rnd() * 19);
      for (let s = 0; s < steps; s++) {
        const action = actions[Math.floor(rnd() * 4)];
        const n = view.minutiae.length;
        const target = n ? Math.floor(rnd() * n) : 0;
        const before = JSON.stringify(view.minutiae);
        view.editMinutia(action, action === "insert" ? undefined : target, {
          x: rnd() * 100,
          y: rnd() * 100,
          theta: rnd() * 20 - 10,
          dx: rnd() * 10 - 5,
          dy: rnd() * 10 - 5,
          dtheta: rnd() * 20 - 10,
        });
        if (JSON.stringify(view.minutiae) !== before) applied++;
      }
      const final = JSON.parse(JSON.stringify(view.minutiae));
      for (let s = 0; s < applied; s++) expect(view.undo()).toBe(true);
      expect(view.undo()).toBe(false);
      expect(view.minutiae).toEqual(initial);
      for (let s = 0; s < applied; s++) expect(view.redo()).toBe(true);
      expect(view.minutiae).toEqual(final);
    }
  });
});
