/**
 * Browser bootstrap: wires the canvases, gallery and toggles to the store.
 * All numeric work (correspondence, masks, metrics) happens server-side.
 */

import { AnnotationClient, Polarity } from "./api.js";
import { Viewport } from "./coords.js";
import {
  Draw2D,
  drawBaseImage,
  drawPromptMarkers,
  renderTargetScene,
} from "./overlays.js";
import { SessionStore, openSession, overlayIsStale } from "./state.js";

const ZOOM_LEVELS = [0.5, 1, 2, 3, 4, 6, 8];

interface LoadedImages {
  template: ImageBitmap;
  targets: Map<string, ImageBitmap>;
}

async function fetchBitmap(url: string): Promise<ImageBitmap> {
  const resp = await fetch(url);
  if (!resp.ok) throw new Error(`cannot load ${url}: ${resp.status}`);
  return createImageBitmap(await resp.blob());
}

async function bitmapFromBase64Png(b64: string): Promise<ImageBitmap> {
  const bytes = Uint8Array.from(atob(b64), (ch) => ch.charCodeAt(0));
  return createImageBitmap(new Blob([bytes], { type: "image/png" }));
}

/** Recolor a 0/255 mask PNG to the translucent fill color. */
async function maskBitmap(b64: string): Promise<ImageBitmap> {
  const raw = await bitmapFromBase64Png(b64);
  const canvas = document.createElement("canvas");
  canvas.width = raw.width;
  canvas.height = raw.height;
  const ctx = canvas.getContext("2d")!;
  ctx.drawImage(raw, 0, 0);
  const data = ctx.getImageData(0, 0, raw.width, raw.height);
  for (let i = 0; i < data.data.length; i += 4) {
    const on = data.data[i] >= 128;
    data.data[i] = 34;
    data.data[i + 1] = 197;
    data.data[i + 2] = 94;
    data.data[i + 3] = on ? 255 : 0;
  }
  ctx.putImageData(data, 0, 0);
  return createImageBitmap(canvas);
}

class App {
  private viewport: Viewport = { zoom: 4, panX: 0, panY: 0 };
  private zoomIndex = 4;
  private polarity: Polarity = "positive";
  private maskBitmaps = new Map<string, { revision: number; bitmap: ImageBitmap }>();
  private heatmapBitmaps = new Map<string, { revision: number; bitmap: ImageBitmap }>();

  constructor(
    private store: SessionStore,
    private images: LoadedImages,
    private templateCanvas: HTMLCanvasElement,
    private targetCanvas: HTMLCanvasElement,
  ) {}

  get state() {
    return this.store.state;
  }

  attach(): void {
    this.templateCanvas.addEventListener("click", (ev) => this.onTemplateClick(ev));
    this.templateCanvas.addEventListener("contextmenu", (ev) => {
      ev.preventDefault();
      this.onTemplateClick(ev, "negative");
    });
    for (const canvas of [this.templateCanvas, this.targetCanvas]) {
      canvas.addEventListener("wheel", (ev) => {
        ev.preventDefault();
        this.zoomIndex = Math.min(
          ZOOM_LEVELS.length - 1,
          Math.max(0, this.zoomIndex + (ev.deltaY < 0 ? 1 : -1)),
        );
        this.viewport = { ...this.viewport, zoom: ZOOM_LEVELS[this.zoomIndex] };
        this.renderAll();
      });
    }
    this.store.onChange(() => this.renderAll());
    this.renderAll();
    void this.refreshSelected();
  }

  private async onTemplateClick(ev: MouseEvent, forced?: Polarity): Promise<void> {
    const rect = this.templateCanvas.getBoundingClientRect();
    const screen = { x: ev.clientX - rect.left, y: ev.clientY - rect.top };
    const index = await this.store.clickToPrompt(screen, this.viewport, forced ?? this.polarity);
    if (index !== null) {
      await this.refreshSelected();
    }
  }

  setPolarity(polarity: Polarity): void {
    this.polarity = polarity;
  }

  async selectTarget(targetId: string): Promise<void> {
    this.store.selectTarget(targetId);
    await this.refreshSelected();
  }

  async removePrompt(index: number): Promise<void> {
    if (await this.store.removePrompt(index)) {
      this.maskBitmaps.clear();
      this.heatmapBitmaps.clear();
      await this.refreshSelected();
    }
  }

  private async refreshSelected(): Promise<void> {
    const target = this.state.selectedTarget;
    if (!target) return;
    await this.store.refreshCorrespondence(target);
    if (this.state.toggles.mask && this.state.prompts.some((p) => p.polarity === "positive")) {
      const doc = await this.store.refreshMask(target);
      if (doc) {
        this.maskBitmaps.set(target, {
          revision: doc.revision,
          bitmap: await maskBitmap(doc.mask_png_base64),
        });
      } else {
        this.maskBitmaps.delete(target);
      }
    } else {
      this.maskBitmaps.delete(target);
    }
    if (this.state.toggles.heatmap && this.state.prompts.length > 0) {
      const url = this.store.client.heatmapUrl(
        this.state.sessionId, target, 0, this.state.revision,
      );
      this.heatmapBitmaps.set(target, {
        revision: this.state.revision,
        bitmap: await fetchBitmap(url),
      });
    }
    this.renderAll();
  }

  private renderAll(): void {
    this.renderTemplate();
    this.renderTarget();
    this.renderChrome();
  }

  private renderTemplate(): void {
    const ctx = this.templateCanvas.getContext("2d") as unknown as Draw2D;
    ctx.clearRect(0, 0, this.templateCanvas.width, this.templateCanvas.height);
    drawBaseImage(ctx, this.images.template, this.viewport);
    drawPromptMarkers(ctx, this.state.prompts, this.viewport);
  }

  private renderTarget(): void {
    const target = this.state.selectedTarget;
    if (!target) return;
    const ctx = this.targetCanvas.getContext("2d") as unknown as Draw2D;
    const cached = this.state.overlays.get(target);
    const mask = this.maskBitmaps.get(target);
    const heatmap = this.heatmapBitmaps.get(target);
    renderTargetScene(
      ctx,
      {
        image: this.images.targets.get(target) ?? null,
        mask: mask && mask.revision >= this.state.revision ? mask.bitmap : null,
        heatmap: heatmap && heatmap.revision >= this.state.revision ? heatmap.bitmap : null,
        matches: cached?.correspondence?.matches ?? [],
        toggles: this.state.toggles,
      },
      this.viewport,
      this.targetCanvas,
    );
  }

  private renderChrome(): void {
    const revision = document.getElementById("revision");
    if (revision) revision.textContent = `revision ${this.state.revision}`;
    const status = document.getElementById("status");
    if (status) {
      const target = this.state.selectedTarget;
      const stale = target ? overlayIsStale(this.state, target) : false;
      status.textContent = this.state.lastError
        ?? (this.state.pending ? "working..." : stale ? "overlays stale - refreshing" : "ready");
      status.className = this.state.lastError ? "error" : stale ? "stale" : "";
      if (this.state.lastError) {
        const retry = document.createElement("button");
        retry.textContent = "retry";
        retry.addEventListener("click", () => void this.refreshSelected());
        status.appendChild(retry);
      }
    }
    const list = document.getElementById("prompt-list");
    if (list) {
      list.replaceChildren(
        ...this.state.prompts.map((p) => {
          const li = document.createElement("li");
          li.textContent = `${p.polarity === "positive" ? "+" : "-"} (${p.row}, ${p.col})`;
          const btn = document.createElement("button");
          btn.textContent = "x";
          btn.addEventListener("click", () => void this.removePrompt(p.index));
          li.appendChild(btn);
          return li;
        }),
      );
    }
    const gallery = document.getElementById("gallery");
    if (gallery) {
      gallery.replaceChildren(
        ...this.state.targets.map((tid) => {
          const btn = document.createElement("button");
          btn.textContent = tid;
          btn.disabled = tid === this.state.selectedTarget;
          btn.addEventListener("click", () => void this.selectTarget(tid));
          return btn;
        }),
      );
    }
  }
}

async function boot(): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const service = params.get("service") ?? "http://127.0.0.1:8008";
  const model = params.get("model") ?? "d2s14";
  const template = params.get("template") ?? "template";
  const targets = (params.get("targets") ?? "").split(",").filter(Boolean);
  if (targets.length === 0) {
    document.body.textContent =
      "usage: index.html?service=http://host:port&model=d2s14&template=ID&targets=ID1,ID2";
    return;
  }

  const client = new AnnotationClient(service);
  const templateBitmap = await fetchBitmap(client.imageUrl(template));
  const store = await openSession(
    client,
    { model, template, targets },
    { height: templateBitmap.height, width: templateBitmap.width },
  );
  const targetBitmaps = new Map<string, ImageBitmap>();
  for (const tid of targets) {
    targetBitmaps.set(tid, await fetchBitmap(client.imageUrl(tid)));
  }

  const app = new App(
    store,
    { template: templateBitmap, targets: targetBitmaps },
    document.getElementById("template-canvas") as HTMLCanvasElement,
    document.getElementById("target-canvas") as HTMLCanvasElement,
  );
  (document.getElementById("polarity") as HTMLSelectElement).addEventListener(
    "change",
    (ev) => app.setPolarity((ev.target as HTMLSelectElement).value as Polarity),
  );
  for (const layer of ["prompts", "mask", "heatmap"] as const) {
    const box = document.getElementById(`toggle-${layer}`) as HTMLInputElement | null;
    box?.addEventListener("change", () => store.setToggle(layer, box.checked));
  }
  app.attach();
}

if (typeof window !== "undefined" && typeof document !== "undefined") {
  void boot();
}
