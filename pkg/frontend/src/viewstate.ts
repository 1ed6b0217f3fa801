/**
 * Client-side viewport state and the gesture-to-command mapping.
 *
 * Coordinates: (x, y) is the view origin in full-resolution slide pixels;
 * zoom is screen pixels per slide pixel. A drag moves the slide with the
 * pointer (drag right => origin moves left), a wheel zoom is multiplicative
 * about the cursor, and a field jump translates by exactly one field width.
 *
 * Commands are coalesced client-side: however many gestures land between
 * animation ticks, takeCommand() emits at most one command per tick, with a
 * strictly increasing client_seq.
 */

import type { ViewportCommand } from './protocol.js';

export const DEFAULT_ZOOM_STEP = 1.25;
export const MIN_ZOOM = 0.01;
export const MAX_ZOOM = 16.0;

export class ViewState {
  x = 0;
  y = 0;
  zoom = 1.0;
  readonly windowW: number;
  readonly windowH: number;
  private seq = 0;
  private dirty = true; // the first tick announces the initial view

  constructor(windowW: number, windowH: number) {
    this.windowW = windowW;
    this.windowH = windowH;
  }

  get lastSeq(): number {
    return this.seq;
  }

  /** Pointer drag in screen pixels: the content follows the pointer. */
  dragBy(dxScreen: number, dyScreen: number): void {
    this.x -= dxScreen / this.zoom;
    this.y -= dyScreen / this.zoom;
    this.dirty = true;
  }

  /** Multiplicative zoom keeping the slide point under the cursor fixed. */
  zoomAt(cursorX: number, cursorY: number, factor: number): void {
    const next = Math.min(MAX_ZOOM, Math.max(MIN_ZOOM, this.zoom * factor));
    if (next === this.zoom) {
      return;
    }
    const slideX = this.x + cursorX / this.zoom;
    const slideY = this.y + cursorY / this.zoom;
    this.zoom = next;
    this.x = slideX - cursorX / this.zoom;
    this.y = slideY - cursorY / this.zoom;
    this.dirty = true;
  }

  /** Jump to a fresh field: translate by exactly one field width. */
  jumpNewField(): void {
    this.x += this.windowW / this.zoom;
    this.dirty = true;
  }

  /** The coalesced command for this animation tick, or null when clean. */
  takeCommand(): ViewportCommand | null {
    if (!this.dirty) {
      return null;
    }
    this.dirty = false;
    this.seq += 1;
    return {
      type: 'viewport',
      x: this.x,
      y: this.y,
      zoom: this.zoom,
      client_seq: this.seq,
    };
  }
}
