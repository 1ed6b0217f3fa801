/**
 * DOM shell: binds the viewer core to the canvas, pointer/wheel gestures,
 * the jump button, status line, charts, and metric badges.
 */

import { ViewerClient } from './client.js';
import { drawStripChart } from './charts.js';
import type { FramePacket, MetricsPacket } from './protocol.js';

const FRAME_W = 1024;
const FRAME_H = 640;

function byId<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing #${id}`);
  return el as T;
}

const canvas = byId<HTMLCanvasElement>('scope');
canvas.width = FRAME_W;
canvas.height = FRAME_H;
const scopeCtx = canvas.getContext('2d')!;
const fpsChart = byId<HTMLCanvasElement>('fps-chart').getContext('2d')!;
const rateChart = byId<HTMLCanvasElement>('rate-chart').getContext('2d')!;
const statusEl = byId<HTMLSpanElement>('status');
const badges = {
  lrTefov: byId<HTMLSpanElement>('badge-lr-tefov'),
  lrTpt: byId<HTMLSpanElement>('badge-lr-tpt'),
  hrTefov: byId<HTMLSpanElement>('badge-hr-tefov'),
  hrTpt: byId<HTMLSpanElement>('badge-hr-tpt'),
};

let pendingBitmap: Promise<void> | null = null;

function presentFrame(packet: FramePacket): void {
  // decode off the handler; always draw the newest decoded frame
  const blob = new Blob([packet.png.slice()], { type: 'image/png' });
  pendingBitmap = createImageBitmap(blob).then((bitmap) => {
    scopeCtx.drawImage(bitmap, 0, 0, canvas.width, canvas.height);
    bitmap.close();
  });
  void pendingBitmap;
}

function fmt(value: number | null | undefined, digits = 2): string {
  return value === null || value === undefined ? '-' : value.toFixed(digits);
}

function updateBadges(m: MetricsPacket): void {
  badges.lrTefov.textContent = fmt(m.per_class.LR?.tefov_ms, 1);
  badges.lrTpt.textContent = fmt(m.per_class.LR?.tpt_us, 0);
  badges.hrTefov.textContent = fmt(m.per_class.HR?.tefov_ms, 1);
  badges.hrTpt.textContent = fmt(m.per_class.HR?.tpt_us, 0);
}

const wsUrl = `ws://${location.host}/ws`;
const client = new ViewerClient({
  url: wsUrl,
  windowW: FRAME_W,
  windowH: FRAME_H,
  makeSocket: (url) => new WebSocket(url),
  onFrame: presentFrame,
  onMetrics: updateBadges,
  onStatus: (status, detail) => {
    statusEl.textContent = detail ? `${status} (${detail})` : status;
    statusEl.className = `status ${status}`;
    if (status === 'closed') {
      setTimeout(() => client.connect(), 1000); // resume after a drop
    }
  },
  onServerError: (message) => {
    statusEl.textContent = `server: ${message}`;
  },
});
client.connect();

// -- gestures ---------------------------------------------------------------

let dragging = false;
let lastX = 0;
let lastY = 0;

canvas.addEventListener('pointerdown', (ev) => {
  dragging = true;
  lastX = ev.clientX;
  lastY = ev.clientY;
  canvas.setPointerCapture(ev.pointerId);
});
canvas.addEventListener('pointermove', (ev) => {
  if (!dragging) return;
  const rect = canvas.getBoundingClientRect();
  const sx = canvas.width / rect.width;
  const sy = canvas.height / rect.height;
  client.view.dragBy((ev.clientX - lastX) * sx, (ev.clientY - lastY) * sy);
  lastX = ev.clientX;
  lastY = ev.clientY;
});
canvas.addEventListener('pointerup', () => {
  dragging = false;
});
canvas.addEventListener(
  'wheel',
  (ev) => {
    ev.preventDefault();
    const rect = canvas.getBoundingClientRect();
    const cx = (ev.clientX - rect.left) * (canvas.width / rect.width);
    const cy = (ev.clientY - rect.top) * (canvas.height / rect.height);
    client.view.zoomAt(cx, cy, ev.deltaY < 0 ? 1.25 : 1 / 1.25);
  },
  { passive: false },
);

function jump(): void {
  client.view.jumpNewField();
}
byId<HTMLButtonElement>('jump').addEventListener('click', jump);
window.addEventListener('keydown', (ev) => {
  if (ev.key === 'j' || ev.key === 'J') jump();
});

// -- animation loop ----------------------------------------------------------

function loop(): void {
  client.tick(); // at most one command per animation tick
  const now = client.lastMetrics?.timestamp ?? 0;
  drawStripChart(fpsChart, client.fpsSeries, now, {
    label: 'frame rate',
    unit: 'FPS',
    stroke: '#53b1fd',
    fill: 'rgba(83, 177, 253, 0.25)',
  });
  drawStripChart(rateChart, client.rateSeries, now, {
    label: 'buffer rate',
    unit: 'GB/s',
    stroke: '#46c98b',
    fill: 'rgba(70, 201, 139, 0.25)',
  });
  requestAnimationFrame(loop);
}
requestAnimationFrame(loop);
