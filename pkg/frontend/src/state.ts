/**
 * Session state for the annotation UI.
 *
 * The client is thin: every number comes from the server. This store tracks
 * the prompts/revision the server confirmed, caches per-target overlays
 * tagged with the revision they were computed at, and refuses to apply
 * responses older than the revision already on display.
 */

import {
  AnnotationClient,
  ApiError,
  CorrespondenceDoc,
  MaskDoc,
  Polarity,
  PromptView,
  SessionDoc,
} from "./api.js";
import { Pixel, ScreenPoint, Viewport, insideImage, pixelFromScreen } from "./coords.js";

export interface OverlayToggles {
  prompts: boolean;
  mask: boolean;
  heatmap: boolean;
}

export interface TargetOverlays {
  correspondence?: CorrespondenceDoc;
  mask?: MaskDoc;
}

export interface UiSessionState {
  sessionId: string;
  templateId: string;
  templateDims: { height: number; width: number };
  targets: string[];
  selectedTarget: string | null;
  prompts: PromptView[];
  revision: number;
  toggles: OverlayToggles;
  pending: boolean;
  /** per-target overlays at the revision they were fetched */
  overlays: Map<string, TargetOverlays>;
  lastError: string | null;
}

export function initialState(
  doc: SessionDoc,
  dims: { height: number; width: number },
): UiSessionState {
  return {
    sessionId: doc.id,
    templateId: doc.template,
    templateDims: dims,
    targets: doc.targets,
    selectedTarget: doc.targets[0] ?? null,
    prompts: doc.prompts,
    revision: doc.revision,
    toggles: { prompts: true, mask: true, heatmap: false },
    pending: false,
    overlays: new Map(),
    lastError: null,
  };
}

/** Overlays are stale when their revision lags the displayed one. */
export function overlayIsStale(state: UiSessionState, targetId: string): boolean {
  const cached = state.overlays.get(targetId);
  if (!cached) return true;
  const revs: number[] = [];
  if (cached.correspondence) revs.push(cached.correspondence.revision);
  if (cached.mask) revs.push(cached.mask.revision);
  return revs.length === 0 || Math.min(...revs) < state.revision;
}

export class SessionStore {
  state: UiSessionState;
  private listeners: Array<(s: UiSessionState) => void> = [];

  constructor(
    readonly client: AnnotationClient,
    doc: SessionDoc,
    dims: { height: number; width: number },
  ) {
    this.state = initialState(doc, dims);
  }

  onChange(listener: (s: UiSessionState) => void): void {
    this.listeners.push(listener);
  }

  private emit(): void {
    for (const fn of this.listeners) fn(this.state);
  }

  private applyRevision(revision: number): void {
    if (revision > this.state.revision) {
      this.state.revision = revision;
      // everything cached below this revision is now stale; keep entries so
      // the old layers can render flagged until the refresh lands
    }
  }

  /**
   * Convert a canvas click to an image pixel and register the prompt.
   * Returns the confirmed prompt index, or null when rejected.
   */
  async clickToPrompt(
    screen: ScreenPoint,
    viewport: Viewport,
    polarity: Polarity,
  ): Promise<number | null> {
    const pixel: Pixel = pixelFromScreen(screen, viewport);
    if (!insideImage(pixel, this.state.templateDims)) {
      this.state.lastError = "click outside the template image";
      this.emit();
      return null;
    }
    this.state.pending = true;
    this.emit();
    try {
      const resp = await this.client.addPrompt(this.state.sessionId, {
        row: pixel.row,
        col: pixel.col,
        polarity,
      });
      this.state.prompts = (await this.client.getSession(this.state.sessionId)).prompts;
      this.applyRevision(resp.revision);
      this.state.lastError = null;
      return resp.index;
    } catch (err) {
      this.state.lastError = err instanceof ApiError ? err.detail : String(err);
      return null;
    } finally {
      this.state.pending = false;
      this.emit();
    }
  }

  async removePrompt(index: number): Promise<boolean> {
    this.state.pending = true;
    this.emit();
    try {
      const resp = await this.client.removePrompt(this.state.sessionId, index);
      this.state.prompts = (await this.client.getSession(this.state.sessionId)).prompts;
      this.applyRevision(resp.revision);
      // a removed prompt invalidates every mask/correspondence immediately
      this.state.overlays.clear();
      this.state.lastError = null;
      return true;
    } catch (err) {
      this.state.lastError = err instanceof ApiError ? err.detail : String(err);
      return false;
    } finally {
      this.state.pending = false;
      this.emit();
    }
  }

  selectTarget(targetId: string): void {
    if (!this.state.targets.includes(targetId)) return;
    this.state.selectedTarget = targetId;
    this.emit();
  }

  setToggle(layer: keyof OverlayToggles, on: boolean): void {
    this.state.toggles[layer] = on;
    this.emit();
  }

  /** True when the cached overlays for the target already match the revision. */
  overlaysFresh(targetId: string): boolean {
    return !overlayIsStale(this.state, targetId);
  }

  async refreshCorrespondence(targetId: string): Promise<CorrespondenceDoc | null> {
    const cached = this.state.overlays.get(targetId)?.correspondence;
    if (cached && cached.revision === this.state.revision) {
      return cached; // no fetch needed between edits
    }
    try {
      const doc = await this.client.getCorrespondence(this.state.sessionId, targetId);
      if (doc.revision >= this.state.revision) {
        const entry = this.state.overlays.get(targetId) ?? {};
        entry.correspondence = doc;
        this.state.overlays.set(targetId, entry);
        this.applyRevision(doc.revision);
        this.state.lastError = null;
      }
      this.emit();
      return doc;
    } catch (err) {
      this.state.lastError = err instanceof ApiError ? err.detail : String(err);
      this.emit();
      return null;
    }
  }

  async refreshMask(targetId: string): Promise<MaskDoc | null> {
    const cached = this.state.overlays.get(targetId)?.mask;
    if (cached && cached.revision === this.state.revision) {
      return cached;
    }
    try {
      const doc = await this.client.getMask(this.state.sessionId, targetId);
      if (doc.revision >= this.state.revision) {
        const entry = this.state.overlays.get(targetId) ?? {};
        entry.mask = doc;
        this.state.overlays.set(targetId, entry);
        this.applyRevision(doc.revision);
        this.state.lastError = null;
      }
      this.emit();
      return doc;
    } catch (err) {
      if (err instanceof ApiError && err.code === "no_positive_prompts") {
        // expected state, not a failure: surface the hint, clear the layer
        const entry = this.state.overlays.get(targetId) ?? {};
        delete entry.mask;
        this.state.overlays.set(targetId, entry);
        this.state.lastError = "add a positive prompt first";
      } else {
        this.state.lastError = err instanceof ApiError ? err.detail : String(err);
      }
      this.emit();
      return null;
    }
  }
}

/** Create a store by opening a session and reading the template dims. */
export async function openSession(
  client: AnnotationClient,
  request: Parameters<AnnotationClient["createSession"]>[0],
  dims: { height: number; width: number },
): Promise<SessionStore> {
  const doc = await client.createSession(request);
  return new SessionStore(client, doc, dims);
}
