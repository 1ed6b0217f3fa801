/**
 * Wire protocol for the gateway control socket.
 *
 * Server -> client binary message (FramePacket): a 16-byte little-endian
 * header { frame_index: u64, width: u32, height: u32 } followed by a PNG
 * encoding of the framebuffer.
 *
 * Server -> client text messages are JSON: MetricsPacket (~10 Hz) or an
 * error report. Client -> server text messages are viewport commands; the
 * server applies only the highest client_seq per engine pass.
 */

export const FRAME_HEADER_BYTES = 16;

export interface FramePacket {
  frameIndex: number;
  width: number;
  height: number;
  png: Uint8Array;
}

export interface ClassMetrics {
  tefov_ms: number | null;
  tpt_us: number | null;
}

export interface MetricsPacket {
  type: 'metrics';
  fps: number | null;
  buffer_rate_gbps: number | null;
  last_tefov_ms: number | null;
  last_tpt_us: number | null;
  pool_occupancy: number;
  timestamp: number;
  per_class: Partial<Record<'LR' | 'HR', ClassMetrics>>;
}

export interface ErrorMessage {
  type: 'error';
  message: string;
}

export type ServerText = MetricsPacket | ErrorMessage;

export interface ViewportCommand {
  type: 'viewport';
  x: number;
  y: number;
  zoom: number;
  client_seq: number;
}

export function parseFramePacket(buffer: ArrayBuffer): FramePacket {
  if (buffer.byteLength < FRAME_HEADER_BYTES) {
    throw new Error(`frame packet too short: ${buffer.byteLength} bytes`);
  }
  const view = new DataView(buffer);
  const frameIndex = Number(view.getBigUint64(0, true));
  const width = view.getUint32(8, true);
  const height = view.getUint32(12, true);
  return {
    frameIndex,
    width,
    height,
    png: new Uint8Array(buffer, FRAME_HEADER_BYTES),
  };
}

export function parseServerText(text: string): ServerText {
  const doc = JSON.parse(text) as { type?: string };
  if (doc.type === 'metrics') {
    return doc as MetricsPacket;
  }
  if (doc.type === 'error') {
    return doc as ErrorMessage;
  }
  throw new Error(`unknown server message type: ${String(doc.type)}`);
}

export function encodeViewportCommand(cmd: ViewportCommand): string {
  return JSON.stringify(cmd);
}
