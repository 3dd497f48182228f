/** UI state: active tool, stroke accumulation, single in-flight mutation. */

import { Viewport } from "./transform.js";

export type Tool = "road-picker" | "fill" | "line" | "freehand" | "erase";

export const TOOL_KEYS: Record<string, Tool> = {
  f: "fill",
  r: "road-picker",
  l: "line",
  d: "freehand",
  e: "erase",
};

export interface Point {
  x: number;
  y: number;
}

export class UiState {
  tool: Tool = "fill";
  /** the UI disables input while a mutation request is pending */
  busy = false;
  maskOpacity = 0.6;
  brushRadius = 1;
  view: Viewport = { zoom: 1, panX: 0, panY: 0 };
  /** first endpoint of a pending straight line */
  lineStart: Point | null = null;
  /** accumulated freehand points while dragging */
  trail: Point[] = [];
  /** pixel counts learned from mutation responses, for hover info */
  pixelCounts = new Map<number, number>();

  setTool(tool: Tool): void {
    this.tool = tool;
    this.lineStart = null;
    this.trail = [];
  }

  /** Maps a key press to an action; ctrl+z is undo, plain letters pick tools. */
  actionForKey(key: string, ctrl: boolean): Tool | "undo" | null {
    if (ctrl && key.toLowerCase() === "z") {
      return "undo";
    }
    if (ctrl) {
      return null;
    }
    return TOOL_KEYS[key.toLowerCase()] ?? null;
  }

  beginMutation(): boolean {
    if (this.busy) {
      return false;
    }
    this.busy = true;
    return true;
  }

  endMutation(): void {
    this.busy = false;
  }

  setOpacity(value: number): void {
    this.maskOpacity = Math.min(1, Math.max(0, value));
  }

  rememberCount(instanceId: number, pixels: number): void {
    if (instanceId > 0) {
      this.pixelCounts.set(instanceId, pixels);
    }
  }

  forgetCount(instanceId: number): void {
    this.pixelCounts.delete(instanceId);
  }
}
