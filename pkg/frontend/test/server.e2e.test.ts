/**
 * Scripted end-to-end run against the real annotation service: create a
 * session, calibrate the road color, flood-fill one vehicle, render the
 * overlay, undo, export boxes. Skipped when the `satcount` CLI is not on
 * PATH (the unit suites above cover everything client-side).
 */

import { spawn, spawnSync, ChildProcess } from "node:child_process";
import { mkdtempSync, readFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

import { PNG } from "pngjs";
import { afterAll, beforeAll, describe, expect, test } from "vitest";

import { AnnotationApi } from "../src/api.js";
import { compositeOverlay, maskToOverlay } from "../src/overlay.js";
import { PALETTE } from "../src/palette.js";

const fixturesDir = join(dirname(fileURLToPath(import.meta.url)), "fixtures");
const serverAvailable = spawnSync("satcount", ["--version"], { stdio: "ignore" }).status === 0;
const port = 18300 + Math.floor(Math.random() * 500);
const base = `http://127.0.0.1:${port}`;

let server: ChildProcess | null = null;

async function waitForHealthy(timeoutMs: number): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    try {
      const response = await fetch(`${base}/healthz`);
      if (response.ok) {
        return;
      }
    } catch {
      // not listening yet
    }
    await new Promise((resolve) => setTimeout(resolve, 150));
  }
  throw new Error("annotation service did not become healthy");
}

describe.skipIf(!serverAvailable)("live annotation service", () => {
  const api = new AnnotationApi(base);

  beforeAll(async () => {
    const sessions = mkdtempSync(join(tmpdir(), "satcount-ui-"));
    server = spawn(
      "satcount",
      ["annotate-serve", "--images", fixturesDir, "--port", String(port), "--sessions", sessions],
      { stdio: "ignore" },
    );
    await waitForHealthy(20000);
  }, 30000);

  afterAll(() => {
    server?.kill();
  });

  test("fill, overlay, undo and export round trip", async () => {
    const images = await api.listImages();
    expect(images).toContain("scene.png");

    const session = await api.createSession("scene.png");
    expect(session.width).toBe(32);
    expect(session.height).toBe(32);
    const id = session.session_id;

    const preMask = await api.fetchMaskBytes(id, "ids");

    const road = await api.setRoadColor(id, 0, 16);
    expect(road.s).toBeCloseTo(0, 6);

    // one click on the 8x5 vehicle at (4..12, 4..9): the fill must claim
    // exactly that rectangle (uniform paint on contrasting road)
    const fill = await api.floodFill(id, 6, 5);
    expect(fill.instance_id).toBe(1);
    expect(fill.pixel_count).toBe(40);
    expect(fill.bounds).toEqual([4, 4, 12, 9]);

    // the palette mask renders the filled region and nothing else
    const maskPng = PNG.sync.read(Buffer.from(await api.fetchMaskBytes(id, "palette")));
    expect([maskPng.width, maskPng.height]).toEqual([32, 32]);
    const overlay = maskToOverlay(new Uint8ClampedArray(maskPng.data));
    const scenePng = PNG.sync.read(readFileSync(join(fixturesDir, "scene.png")));
    const composited = compositeOverlay(
      new Uint8ClampedArray(scenePng.data),
      overlay,
      1.0,
    );
    let colored = 0;
    for (let y = 0; y < 32; y += 1) {
      for (let x = 0; x < 32; x += 1) {
        const o = (y * 32 + x) * 4;
        const inRegion = x >= 4 && x < 12 && y >= 4 && y < 9;
        expect(overlay[o + 3]).toBe(inRegion ? 255 : 0);
        if (inRegion) {
          expect([composited[o], composited[o + 1], composited[o + 2]]).toEqual(PALETTE[0]);
          colored += 1;
        } else {
          // imagery untouched outside the instance
          expect(composited[o]).toBe(scenePng.data[o]);
        }
      }
    }
    expect(colored).toBe(40);

    const boxesAfterFill = await api.boxes(id);
    expect(boxesAfterFill).toEqual([{ id: 1, x_min: 4, y_min: 4, x_max: 12, y_max: 9 }]);

    expect(await api.undo(id)).toBe(true);

    // after undo the server mask is byte-identical to the pre-click mask
    const postMask = await api.fetchMaskBytes(id, "ids");
    expect(Buffer.compare(Buffer.from(preMask), Buffer.from(postMask))).toBe(0);
    expect(await api.boxes(id)).toEqual([]);
  }, 30000);

  test("error contract: filling before road calibration leaves state alone", async () => {
    const session = await api.createSession("scene.png");
    await expect(api.floodFill(session.session_id, 6, 5)).rejects.toThrow(/road color/);
    expect(await api.boxes(session.session_id)).toEqual([]);
  });
});
