/**
 * Headless viewer core: socket lifecycle, command coalescing, frame and
 * metric dispatch. The DOM shell (main.ts) and the end-to-end tests both
 * drive this class; it touches no browser APIs directly so it runs under
 * node with an injected WebSocket implementation.
 */

import {
  FramePacket,
  MetricsPacket,
  encodeViewportCommand,
  parseFramePacket,
  parseServerText,
} from './protocol.js';
import { RollingSeries } from './charts.js';
import { ViewState } from './viewstate.js';

export type ConnectionStatus = 'connecting' | 'connected' | 'error' | 'closed';

/** The subset of the WebSocket API the client uses (browser and `ws`).
 * Handler parameters are deliberately loose so both implementations'
 * stricter event types assign cleanly. */
export interface SocketLike {
  binaryType: string;
  // eslint-disable-next-line @typescript-eslint/no-explicit-any
  onopen: ((ev: any) => void) | null;
  // eslint-disable-next-line @typescript-eslint/no-explicit-any
  onmessage: ((ev: any) => void) | null;
  // eslint-disable-next-line @typescript-eslint/no-explicit-any
  onclose: ((ev: any) => void) | null;
  // eslint-disable-next-line @typescript-eslint/no-explicit-any
  onerror: ((ev: any) => void) | null;
  send(data: string): void;
  close(): void;
}

export interface ViewerOptions {
  url: string;
  windowW: number;
  windowH: number;
  makeSocket: (url: string) => SocketLike;
  onFrame?: (packet: FramePacket) => void;
  onMetrics?: (packet: MetricsPacket) => void;
  onStatus?: (status: ConnectionStatus, detail?: string) => void;
  onServerError?: (message: string) => void;
}

export class ViewerClient {
  readonly view: ViewState;
  readonly fpsSeries = new RollingSeries();
  readonly rateSeries = new RollingSeries();
  status: ConnectionStatus = 'closed';
  lastMetrics: MetricsPacket | null = null;
  framesReceived = 0;
  lastFrameIndex = -1;
  readonly sentSeqs: number[] = [];

  private readonly opts: ViewerOptions;
  private socket: SocketLike | null = null;

  constructor(opts: ViewerOptions) {
    this.opts = opts;
    this.view = new ViewState(opts.windowW, opts.windowH);
  }

  connect(): void {
    this.setStatus('connecting');
    const socket = this.opts.makeSocket(this.opts.url);
    socket.binaryType = 'arraybuffer';
    socket.onopen = () => {
      this.setStatus('connected');
      this.tick(); // announce the initial viewport immediately
    };
    socket.onmessage = (ev: { data: unknown }) => this.handleMessage(ev.data);
    socket.onerror = () => this.setStatus('error', 'socket error');
    socket.onclose = () => {
      if (this.status !== 'error') {
        this.setStatus('closed');
      }
      this.socket = null;
    };
    this.socket = socket;
  }

  close(): void {
    this.socket?.close();
    this.socket = null;
  }

  get connected(): boolean {
    return this.status === 'connected' && this.socket !== null;
  }

  /**
   * One animation tick: emit the coalesced viewport command, if any.
   * At most one command leaves per tick; client_seq strictly increases.
   */
  tick(): void {
    if (!this.connected || this.socket === null) {
      return;
    }
    const cmd = this.view.takeCommand();
    if (cmd !== null) {
      this.sentSeqs.push(cmd.client_seq);
      this.socket.send(encodeViewportCommand(cmd));
    }
  }

  private handleMessage(data: unknown): void {
    if (typeof data === 'string') {
      this.handleText(data);
      return;
    }
    let buffer: ArrayBuffer;
    if (data instanceof ArrayBuffer) {
      buffer = data;
    } else if (ArrayBuffer.isView(data as ArrayBufferView)) {
      const view = data as ArrayBufferView;
      buffer = view.buffer.slice(view.byteOffset, view.byteOffset + view.byteLength) as ArrayBuffer;
    } else {
      return;
    }
    const packet = parseFramePacket(buffer);
    this.framesReceived += 1;
    this.lastFrameIndex = packet.frameIndex;
    this.opts.onFrame?.(packet);
  }

  private handleText(text: string): void {
    const msg = parseServerText(text);
    if (msg.type === 'error') {
      this.opts.onServerError?.(msg.message);
      return;
    }
    this.lastMetrics = msg;
    // chart values are displayed verbatim from the packet
    if (msg.fps !== null) {
      this.fpsSeries.push(msg.timestamp, msg.fps);
    }
    this.rateSeries.push(msg.timestamp, msg.buffer_rate_gbps ?? 0);
    this.opts.onMetrics?.(msg);
  }

  private setStatus(status: ConnectionStatus, detail?: string): void {
    this.status = status;
    this.opts.onStatus?.(status, detail);
  }
}
