/** Browser bootstrap: canvas rendering, pointer/keyboard dispatch, session
 * management. All mask mutations go through the HTTP API and the mask is
 * re-fetched after each one; the browser never predicts fill results. */

import { AnnotationApi, ApiError, BoxRow, SessionInfo } from "./api.js";
import { colorForInstance, cssColor } from "./palette.js";
import { UiState, Tool } from "./state.js";
import { maskToOverlay } from "./overlay.js";
import { hitInstance } from "./overlay.js";
import { panBy, screenToImage, zoomStep } from "./transform.js";

const api = new AnnotationApi("");
const state = new UiState();

let session: SessionInfo | null = null;
let imageBitmap: ImageBitmap | null = null;
let overlayCanvas: HTMLCanvasElement | null = null;
let boxes: BoxRow[] = [];

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) {
    throw new Error(`missing element #${id}`);
  }
  return node as T;
}

const canvas = el<HTMLCanvasElement>("view");
const ctx = canvas.getContext("2d")!;
const toast = el<HTMLDivElement>("toast");
const status = el<HTMLSpanElement>("status");
const hoverInfo = el<HTMLSpanElement>("hover-info");
const imageSelect = el<HTMLSelectElement>("image-select");
const sessionSelect = el<HTMLSelectElement>("session-select");
const opacitySlider = el<HTMLInputElement>("opacity");
const radiusInput = el<HTMLInputElement>("radius");

let toastTimer: number | undefined;

function showToast(message: string): void {
  toast.textContent = message;
  toast.classList.add("visible");
  window.clearTimeout(toastTimer);
  toastTimer = window.setTimeout(() => toast.classList.remove("visible"), 3200);
}

function setStatus(text: string): void {
  status.textContent = text;
}

function fitCanvas(): void {
  canvas.width = canvas.clientWidth;
  canvas.height = canvas.clientHeight;
  redraw();
}

function redraw(): void {
  ctx.imageSmoothingEnabled = false;
  ctx.fillStyle = "#181c20";
  ctx.fillRect(0, 0, canvas.width, canvas.height);
  if (!imageBitmap) {
    return;
  }
  const { zoom, panX, panY } = state.view;
  ctx.drawImage(imageBitmap, panX, panY, imageBitmap.width * zoom, imageBitmap.height * zoom);
  if (overlayCanvas && state.maskOpacity > 0) {
    ctx.globalAlpha = state.maskOpacity;
    ctx.drawImage(overlayCanvas, panX, panY, overlayCanvas.width * zoom, overlayCanvas.height * zoom);
    ctx.globalAlpha = 1;
  }
  if (state.lineStart) {
    const sx = state.lineStart.x * zoom + panX + zoom / 2;
    const sy = state.lineStart.y * zoom + panY + zoom / 2;
    ctx.strokeStyle = "#ffffff";
    ctx.beginPath();
    ctx.arc(sx, sy, 4, 0, Math.PI * 2);
    ctx.stroke();
  }
}

async function refreshMask(): Promise<void> {
  if (!session) {
    return;
  }
  const response = await fetch(api.maskUrl(session.session_id));
  if (!response.ok) {
    throw new ApiError(response.status, "mask fetch failed");
  }
  const bitmap = await createImageBitmap(await response.blob());
  if (bitmap.width !== session.width || bitmap.height !== session.height) {
    showToast(`mask is ${bitmap.width}x${bitmap.height}, image is ${session.width}x${session.height}`);
    return;
  }
  const off = document.createElement("canvas");
  off.width = bitmap.width;
  off.height = bitmap.height;
  const octx = off.getContext("2d")!;
  octx.drawImage(bitmap, 0, 0);
  const data = octx.getImageData(0, 0, off.width, off.height);
  maskToOverlay(data.data);
  octx.putImageData(data, 0, 0);
  overlayCanvas = off;
  redraw();
}

async function refreshBoxes(): Promise<void> {
  if (session) {
    boxes = await api.boxes(session.session_id);
  }
}

async function openSession(info: SessionInfo): Promise<void> {
  session = info;
  const response = await fetch(api.imageUrl(info.session_id));
  imageBitmap = await createImageBitmap(await response.blob());
  state.view = { zoom: 1, panX: 0, panY: 0 };
  state.pixelCounts.clear();
  await refreshMask();
  await refreshBoxes();
  const exportLink = el<HTMLAnchorElement>("export-boxes");
  exportLink.href = api.boxesUrl(info.session_id);
  setStatus(`session ${info.session_id.slice(0, 8)} · ${info.width}x${info.height}`);
}

async function reloadSessionList(): Promise<void> {
  const sessions = await api.listSessions();
  sessionSelect.innerHTML = "";
  for (const entry of sessions) {
    const option = document.createElement("option");
    option.value = entry.session_id;
    option.textContent = `${entry.image} · ${entry.session_id.slice(0, 8)}`;
    sessionSelect.appendChild(option);
  }
  sessionSelect.disabled = sessions.length === 0;
}

/** Runs one server mutation with the in-flight guard; view state is left
 * untouched when the server rejects the action. */
async function mutate(action: () => Promise<void>): Promise<void> {
  if (!state.beginMutation()) {
    return;
  }
  document.body.classList.add("busy");
  try {
    await action();
    await refreshMask();
    await refreshBoxes();
  } catch (error) {
    showToast(error instanceof ApiError ? `server: ${error.message}` : String(error));
  } finally {
    state.endMutation();
    document.body.classList.remove("busy");
  }
}

async function dispatchClick(tool: Tool, ix: number, iy: number): Promise<void> {
  if (!session) {
    return;
  }
  const id = session.session_id;
  if (tool === "road-picker") {
    await mutate(async () => {
      const color = await api.setRoadColor(id, ix, iy);
      setStatus(`road color set (s=${color.s.toFixed(3)}, v=${color.v.toFixed(3)})`);
    });
  } else if (tool === "fill") {
    await mutate(async () => {
      const result = await api.floodFill(id, ix, iy);
      state.rememberCount(result.instance_id, result.pixel_count);
      setStatus(`instance ${result.instance_id}: ${result.pixel_count} px`);
    });
  } else if (tool === "erase") {
    const hit = hitInstance(boxes, ix, iy);
    if (!hit) {
      showToast("no instance under the cursor");
      return;
    }
    await mutate(async () => {
      const cleared = await api.eraseInstance(id, hit.id);
      state.forgetCount(hit.id);
      setStatus(`erased instance ${hit.id} (${cleared} px)`);
    });
  } else if (tool === "line") {
    if (!state.lineStart) {
      state.lineStart = { x: ix, y: iy };
      redraw();
      return;
    }
    const start = state.lineStart;
    state.lineStart = null;
    await mutate(async () => {
      const result = await api.stroke(
        id,
        "line",
        [
          [start.x, start.y],
          [ix, iy],
        ],
        state.brushRadius,
      );
      state.rememberCount(result.instance_id, result.pixel_count);
      setStatus(`instance ${result.instance_id}: ${result.pixel_count} px`);
    });
  }
}

async function finishFreehand(): Promise<void> {
  if (!session || state.trail.length === 0) {
    return;
  }
  const points = state.trail.map((p) => [p.x, p.y] as [number, number]);
  state.trail = [];
  await mutate(async () => {
    const result = await api.stroke(session!.session_id, "freehand", points, state.brushRadius);
    state.rememberCount(result.instance_id, result.pixel_count);
    setStatus(`instance ${result.instance_id}: ${result.pixel_count} px`);
  });
}

function imagePointFromEvent(event: MouseEvent) {
  const rect = canvas.getBoundingClientRect();
  return screenToImage(state.view, event.clientX - rect.left, event.clientY - rect.top);
}

let panning: { x: number; y: number } | null = null;

canvas.addEventListener("pointerdown", (event) => {
  if (event.button === 1 || event.shiftKey) {
    panning = { x: event.clientX, y: event.clientY };
    event.preventDefault();
    return;
  }
  if (event.button !== 0 || state.busy || !session) {
    return;
  }
  const point = imagePointFromEvent(event);
  if (state.tool === "freehand") {
    state.trail = [point];
    canvas.setPointerCapture(event.pointerId);
    return;
  }
  void dispatchClick(state.tool, point.x, point.y);
});

canvas.addEventListener("pointermove", (event) => {
  if (panning) {
    state.view = panBy(state.view, event.clientX - panning.x, event.clientY - panning.y);
    panning = { x: event.clientX, y: event.clientY };
    redraw();
    return;
  }
  if (state.tool === "freehand" && state.trail.length > 0) {
    const point = imagePointFromEvent(event);
    const last = state.trail[state.trail.length - 1];
    if (point.x !== last.x || point.y !== last.y) {
      state.trail.push(point);
    }
    return;
  }
  const point = imagePointFromEvent(event);
  const hit = hitInstance(boxes, point.x, point.y);
  if (hit) {
    const count = state.pixelCounts.get(hit.id);
    hoverInfo.textContent = `instance ${hit.id}${count !== undefined ? ` · ${count} px` : ""}`;
    hoverInfo.style.color = cssColor(colorForInstance(hit.id));
  } else {
    hoverInfo.textContent = `(${point.x}, ${point.y})`;
    hoverInfo.style.color = "";
  }
});

canvas.addEventListener("pointerup", (event) => {
  if (panning) {
    panning = null;
    return;
  }
  if (state.tool === "freehand" && state.trail.length > 0) {
    canvas.releasePointerCapture(event.pointerId);
    void finishFreehand();
  }
});

canvas.addEventListener("wheel", (event) => {
  event.preventDefault();
  const rect = canvas.getBoundingClientRect();
  state.view = zoomStep(
    state.view,
    event.deltaY < 0 ? 1 : -1,
    event.clientX - rect.left,
    event.clientY - rect.top,
  );
  redraw();
});

document.addEventListener("keydown", (event) => {
  const target = event.target as HTMLElement;
  if (target.tagName === "INPUT" || target.tagName === "SELECT") {
    return;
  }
  const action = state.actionForKey(event.key, event.ctrlKey || event.metaKey);
  if (action === "undo") {
    event.preventDefault();
    if (session && !state.busy) {
      void mutate(async () => {
        const reverted = await api.undo(session!.session_id);
        setStatus(reverted ? "undone" : "nothing to undo");
      });
    }
  } else if (action) {
    state.setTool(action);
    document.querySelectorAll<HTMLButtonElement>("[data-tool]").forEach((button) => {
      button.classList.toggle("active", button.dataset.tool === action);
    });
    redraw();
  }
});

document.querySelectorAll<HTMLButtonElement>("[data-tool]").forEach((button) => {
  button.addEventListener("click", () => {
    state.setTool(button.dataset.tool as Tool);
    document.querySelectorAll<HTMLButtonElement>("[data-tool]").forEach((other) => {
      other.classList.toggle("active", other === button);
    });
  });
});

el<HTMLButtonElement>("undo-button").addEventListener("click", () => {
  if (session && !state.busy) {
    void mutate(async () => {
      const reverted = await api.undo(session!.session_id);
      setStatus(reverted ? "undone" : "nothing to undo");
    });
  }
});

el<HTMLButtonElement>("new-session").addEventListener("click", () => {
  const image = imageSelect.value;
  if (!image) {
    showToast("no image selected");
    return;
  }
  void (async () => {
    try {
      const info = await api.createSession(image);
      await reloadSessionList();
      sessionSelect.value = info.session_id;
      await openSession(info);
    } catch (error) {
      showToast(error instanceof ApiError ? `server: ${error.message}` : String(error));
    }
  })();
});

sessionSelect.addEventListener("change", () => {
  void (async () => {
    const entries = await api.listSessions();
    const entry = entries.find((e) => e.session_id === sessionSelect.value);
    if (entry) {
      await openSession(entry);
    }
  })();
});

opacitySlider.addEventListener("input", () => {
  state.setOpacity(Number(opacitySlider.value) / 100);
  redraw();
});

radiusInput.addEventListener("change", () => {
  state.brushRadius = Math.max(0, Math.floor(Number(radiusInput.value)));
});

window.addEventListener("resize", fitCanvas);

void (async () => {
  try {
    const images = await api.listImages();
    imageSelect.innerHTML = "";
    for (const name of images) {
      const option = document.createElement("option");
      option.value = name;
      option.textContent = name;
      imageSelect.appendChild(option);
    }
    await reloadSessionList();
    fitCanvas();
    setStatus("pick an image and start a session");
  } catch (error) {
    showToast(`cannot reach the annotation service: ${error}`);
  }
})();
